// SPDX-License-Identifier: Apache-2.0
#include "lister/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace lister::corpus {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

int hamming(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  int d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
  return d;
}

}  // namespace

// ---- GlyphAlphabet ---------------------------------------------------------

GlyphAlphabet::GlyphAlphabet(int glyph_size, std::vector<std::vector<std::uint8_t>> glyphs)
    : glyph_size_(glyph_size), glyphs_(std::move(glyphs)) {
  if (glyph_size_ < 1) throw Error("glyph size must be positive");
  for (std::size_t i = 0; i < glyphs_.size(); ++i) {
    if (glyphs_[i].size() != static_cast<std::size_t>(glyph_size_ * glyph_size_))
      throw Error("glyph " + std::to_string(i) + " has the wrong number of pixels");
    for (std::size_t j = 0; j < i; ++j)
      if (glyphs_[i] == glyphs_[j])
        throw Error("glyphs " + std::to_string(j) + " and " + std::to_string(i) + " are identical");
  }
}

GlyphAlphabet GlyphAlphabet::generate(int symbols, std::uint64_t master_seed, int glyph_size) {
  if (symbols < 1) throw Error("alphabet needs at least one symbol");
  const int k = glyph_size;
  const int min_distance = std::max(1, k * k / 4);
  std::mt19937_64 rng(splitmix64(master_seed));
  std::bernoulli_distribution bit(0.5);
  std::vector<std::vector<std::uint8_t>> glyphs;
  int attempts = 0;
  while (static_cast<int>(glyphs.size()) < symbols) {
    if (++attempts > 100000) throw Error("could not draw enough distinct glyphs");
    std::vector<std::uint8_t> g(static_cast<std::size_t>(k * k));
    for (auto& p : g) p = bit(rng) ? 1 : 0;
    // the outer columns carry ink so every glyph spans exactly k columns
    bool left = false, right = false;
    for (int r = 0; r < k; ++r) {
      left = left || g[static_cast<std::size_t>(r * k)];
      right = right || g[static_cast<std::size_t>(r * k + k - 1)];
    }
    if (!left || !right) continue;
    bool far = true;
    for (const auto& other : glyphs) far = far && hamming(g, other) >= min_distance;
    if (far) glyphs.push_back(std::move(g));
  }
  return GlyphAlphabet(k, std::move(glyphs));
}

void GlyphAlphabet::save(const std::filesystem::path& file) const {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  for (int s = 0; s < size(); ++s) {
    out << s << '\t' << glyph_size_ << '\t';
    for (auto p : glyphs_[static_cast<std::size_t>(s)]) out << (p ? '1' : '0');
    out << '\n';
  }
  if (!out) throw Error("write failed: " + file.string());
}

GlyphAlphabet GlyphAlphabet::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error("cannot read " + file.string());
  std::vector<std::vector<std::uint8_t>> glyphs;
  int k = -1;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    int id = 0, size = 0;
    std::string bits;
    if (!(ls >> id >> size >> bits) || id != static_cast<int>(glyphs.size()) ||
        bits.size() != static_cast<std::size_t>(size * size) || (k >= 0 && size != k))
      throw Error("malformed alphabet line " + std::to_string(glyphs.size()) + " in " + file.string());
    k = size;
    std::vector<std::uint8_t> g;
    for (char c : bits) g.push_back(c == '1' ? 1 : 0);
    glyphs.push_back(std::move(g));
  }
  if (glyphs.empty()) throw Error("empty alphabet: " + file.string());
  return GlyphAlphabet(k, std::move(glyphs));
}

// ---- rendering -------------------------------------------------------------

Sample render_sample(const std::vector<int>& label, const GlyphAlphabet& alphabet, std::uint64_t seed,
                     const RenderOptions& opts) {
  if (label.empty()) throw Error("empty label");
  for (int s : label)
    if (s < 0 || s >= alphabet.size()) throw Error("unknown symbol id " + std::to_string(s));

  const int k = alphabet.glyph_size();
  const int glyph_rows = k * opts.vertical_scale;
  if (glyph_rows + 2 * opts.max_jitter > kImageHeight) throw Error("glyphs do not fit the image height");

  std::mt19937_64 rng(splitmix64(seed));
  std::uniform_int_distribution<int> jitter(-opts.max_jitter, opts.max_jitter);
  std::uniform_int_distribution<int> spacing(0, opts.max_spacing);

  struct Placement { int x, y; };
  std::vector<Placement> placed;
  int x = opts.margin;
  for (std::size_t i = 0; i < label.size(); ++i) {
    if (i > 0) x += spacing(rng);
    const int y = (kImageHeight - glyph_rows) / 2 + jitter(rng);
    placed.push_back({x, y});
    x += k;
  }
  const int q = std::max(1, opts.width_quantum);
  const int valid_width = (x + opts.margin + q - 1) / q * q;

  Sample s;
  s.label = label;
  s.valid_width = valid_width;
  s.image = Matrix::Constant(kImageHeight, valid_width, kPadValue);
  for (std::size_t i = 0; i < label.size(); ++i) {
    for (int r = 0; r < glyph_rows; ++r)
      for (int c = 0; c < k; ++c)
        if (alphabet.pixel(label[i], r / opts.vertical_scale, c)) s.image(placed[i].y + r, placed[i].x + c) = 1.0;
  }
  if (opts.noise_amplitude > 0) {
    std::uniform_real_distribution<Real> noise(-opts.noise_amplitude, opts.noise_amplitude);
    for (Index r = 0; r < s.image.rows(); ++r)
      for (Index c = 0; c < valid_width; ++c) s.image(r, c) = std::clamp(s.image(r, c) + noise(rng), 0.0, 1.0);
  }
  return s;
}

// ---- lengths ---------------------------------------------------------------

void LengthDistribution::validate() const {
  if (min_len < 1) throw Error("min_len must be >= 1");
  if (max_len < min_len) throw Error("max_len must be >= min_len");
  if (kind == LengthKind::kLongTail && !(decay > 0 && decay < 1)) throw Error("long-tail decay must lie in (0, 1)");
}

Real LengthDistribution::probability(int len) const {
  if (len < min_len || len > max_len) return 0;
  if (kind == LengthKind::kUniform) return 1.0 / (max_len - min_len + 1);
  Real z = 0;
  for (int l = min_len; l <= max_len; ++l) z += std::pow(decay, l);
  return std::pow(decay, len) / z;
}

LengthDistribution LengthDistribution::parse(const std::string& kind, int min_len, int max_len, Real decay) {
  LengthDistribution d;
  if (kind == "uniform") d.kind = LengthKind::kUniform;
  else if (kind == "longtail") d.kind = LengthKind::kLongTail;
  else throw Error("unknown length distribution '" + kind + "' (expected uniform or longtail)");
  d.min_len = min_len;
  d.max_len = max_len;
  d.decay = decay;
  d.validate();
  return d;
}

int sample_length(const LengthDistribution& dist, std::mt19937_64& rng) {
  if (dist.kind == LengthKind::kUniform) return std::uniform_int_distribution<int>(dist.min_len, dist.max_len)(rng);
  std::vector<Real> weights;
  for (int l = dist.min_len; l <= dist.max_len; ++l) weights.push_back(std::pow(dist.decay, l));
  return dist.min_len + std::discrete_distribution<int>(weights.begin(), weights.end())(rng);
}

// ---- corpus files ----------------------------------------------------------

std::string label_to_string(const std::vector<int>& label) {
  std::string out;
  for (std::size_t i = 0; i < label.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(label[i]);
  }
  return out;
}

std::vector<int> parse_label(const std::string& text) {
  std::istringstream in(text);
  std::vector<int> out;
  std::string tok;
  while (in >> tok) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size()) throw Error("bad symbol id '" + tok + "'");
    out.push_back(v);
  }
  return out;
}

std::vector<ManifestRow> build_corpus(int n, const LengthDistribution& dist, const GlyphAlphabet& alphabet,
                                      std::uint64_t seed, const std::filesystem::path& out_dir,
                                      const RenderOptions& opts) {
  if (n < 1) throw Error("corpus size must be >= 1");
  dist.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error("cannot create " + out_dir.string() + ": " + ec.message());
  const auto manifest_path = out_dir / "manifest.tsv";
  std::ofstream manifest(manifest_path);
  if (!manifest) throw Error("cannot write " + manifest_path.string());
  alphabet.save(out_dir / "alphabet.tsv");

  manifest << "id\tlabel\tvalid_width\tfilename\n";
  std::vector<ManifestRow> rows;
  std::uniform_int_distribution<int> symbol(0, alphabet.size() - 1);
  for (int i = 0; i < n; ++i) {
    const std::uint64_t sample_seed = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(i) + 1));
    std::mt19937_64 rng(sample_seed);
    const int len = sample_length(dist, rng);
    std::vector<int> label(static_cast<std::size_t>(len));
    for (int& s : label) s = symbol(rng);
    Sample s = render_sample(label, alphabet, sample_seed, opts);

    char name[32];
    std::snprintf(name, sizeof(name), "img_%06d.pgm", i);
    write_pgm(out_dir / name, s.image);
    ManifestRow row{i, label, s.valid_width, name};
    manifest << row.id << '\t' << label_to_string(row.label) << '\t' << row.valid_width << '\t' << row.filename << '\n';
    rows.push_back(std::move(row));
  }
  if (!manifest) throw Error("write failed: " + manifest_path.string());
  return rows;
}

Corpus load_corpus(const std::filesystem::path& dir) {
  Corpus c;
  c.alphabet = GlyphAlphabet::load(dir / "alphabet.tsv");
  const auto manifest_path = dir / "manifest.tsv";
  std::ifstream in(manifest_path);
  if (!in) throw Error("cannot read " + manifest_path.string());
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || (line_no == 1 && line.rfind("id\t", 0) == 0)) continue;
    const std::string where = manifest_path.string() + " row " + std::to_string(line_no);
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, '\t')) fields.push_back(field);
    if (fields.size() != 4) throw Error(where + ": expected 4 tab-separated columns");
    ManifestRow row;
    try {
      row.id = std::stoi(fields[0]);
      row.valid_width = std::stoi(fields[2]);
      row.label = parse_label(fields[1]);
    } catch (const std::exception& e) {
      throw Error(where + ": " + e.what());
    }
    row.filename = fields[3];
    if (row.label.empty()) throw Error(where + ": empty label");
    for (int s : row.label)
      if (s < 0 || s >= c.alphabet.size()) throw Error(where + ": unknown symbol id " + std::to_string(s));

    Sample s;
    try {
      s.image = read_pgm(dir / row.filename);
    } catch (const Error& e) {
      throw Error(where + ": " + e.what());
    }
    if (s.image.rows() != kImageHeight) throw Error(where + ": image height is not 32");
    if (row.valid_width < 1 || row.valid_width > s.image.cols())
      throw Error(where + ": valid_width " + std::to_string(row.valid_width) + " exceeds image width");
    s.label = row.label;
    s.valid_width = row.valid_width;
    c.samples.push_back(std::move(s));
    c.rows.push_back(std::move(row));
  }
  if (c.samples.empty()) throw Error("empty corpus: " + dir.string());
  return c;
}

Corpus filter_by_length(const Corpus& corpus, int min_len, int max_len) {
  Corpus out;
  out.alphabet = corpus.alphabet;
  for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
    const int len = static_cast<int>(corpus.samples[i].label.size());
    if (len < min_len || len > max_len) continue;
    out.samples.push_back(corpus.samples[i]);
    out.rows.push_back(corpus.rows[i]);
  }
  return out;
}

void write_pgm(const std::filesystem::path& file, const Matrix& image) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error("cannot write " + file.string());
  out << "P5\n" << image.cols() << ' ' << image.rows() << "\n255\n";
  std::vector<unsigned char> bytes(static_cast<std::size_t>(image.size()));
  for (Index i = 0; i < image.size(); ++i)
    bytes[static_cast<std::size_t>(i)] = static_cast<unsigned char>(std::lround(255.0 * std::clamp(image.data()[i], 0.0, 1.0)));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + file.string());
}

Matrix read_pgm(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error("cannot read " + file.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || w < 1 || h < 1 || maxval != 255) throw Error("not an 8-bit P5 greymap: " + file.string());
  in.get();
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw Error("truncated greymap: " + file.string());
  Matrix img(h, w);
  for (Index i = 0; i < img.size(); ++i) img.data()[i] = bytes[static_cast<std::size_t>(i)] / 255.0;
  return img;
}

}  // namespace lister::corpus
