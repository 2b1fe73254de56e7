// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "lister/corpus.hpp"

using namespace lister;
using namespace lister::corpus;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("lister_corpus_" + name);
  fs::remove_all(p);
  return p;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("glyph alphabet: distinct bitmaps, contiguous ids, EOS after the symbols") {
  const auto a = GlyphAlphabet::generate(10, 0);
  CHECK(a.size() == 10);
  CHECK(a.eos_class() == 10);
  CHECK(a.num_classes() == 11);
  for (int i = 0; i < 10; ++i)
    for (int j = i + 1; j < 10; ++j) CHECK(a.glyph(i) != a.glyph(j));
  CHECK(GlyphAlphabet::generate(10, 0).glyph(3) == a.glyph(3));
}

TEST_CASE("render_sample is deterministic and sized by its label") {
  const auto a = GlyphAlphabet::generate(10, 0);
  const Sample s1 = render_sample({3}, a, 7);
  const Sample s2 = render_sample({3}, a, 7);
  CHECK(s1.image == s2.image);
  CHECK(s1.image.rows() == kImageHeight);
  // one 8-pixel glyph plus a 4-pixel margin on each side
  CHECK(s1.valid_width == 16);
  CHECK(render_sample({1, 1}, a, 0).valid_width > render_sample({1}, a, 0).valid_width);
  CHECK((s1.image.array() >= 0).all());
  CHECK((s1.image.array() <= 1).all());
}

TEST_CASE("render_sample rejects bad labels") {
  const auto a = GlyphAlphabet::generate(10, 0);
  CHECK(error_of([&] { render_sample({}, a, 0); }) == "empty label");
  CHECK(error_of([&] { render_sample({2, 10}, a, 0); }).find("10") != std::string::npos);
  CHECK_THROWS_AS(render_sample({-1}, a, 0), Error);
}

TEST_CASE("single-glyph renderings of different symbols differ") {
  const auto a = GlyphAlphabet::generate(10, 0);
  RenderOptions clean;
  clean.noise_amplitude = 0;
  for (int i = 0; i < 10; ++i)
    for (int j = i + 1; j < 10; ++j) CHECK(render_sample({i}, a, 5, clean).image != render_sample({j}, a, 5, clean).image);
}

TEST_CASE("valid width grows with label length") {
  const auto a = GlyphAlphabet::generate(10, 0);
  RenderOptions o;
  o.max_spacing = 0;
  int prev = 0;
  for (int len = 1; len <= 16; ++len) {
    const int w = render_sample(std::vector<int>(static_cast<std::size_t>(len), 4), a, 9, o).valid_width;
    CHECK(w >= prev);
    prev = w;
  }
}

TEST_CASE("length sampler: degenerate, uniform and long-tail laws") {
  std::mt19937_64 rng(3);
  const auto five = LengthDistribution::parse("uniform", 5, 5);
  for (int i = 0; i < 100; ++i) CHECK(sample_length(five, rng) == 5);

  const auto u = LengthDistribution::parse("uniform", 1, 4);
  std::map<int, int> counts;
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[sample_length(u, rng)];
  for (int l = 1; l <= 4; ++l) CHECK(std::abs(counts[l] / static_cast<double>(n) - 0.25) < 0.01);

  const auto lt = LengthDistribution::parse("longtail", 1, 8);
  double z = 0;
  for (int l = 1; l <= 8; ++l) z += std::pow(0.7, l);
  for (int l = 1; l <= 8; ++l) CHECK(lt.probability(l) == doctest::Approx(std::pow(0.7, l) / z).epsilon(1e-12));
  CHECK(lt.probability(1) > lt.probability(8));
  CHECK(lt.probability(9) == 0.0);
  for (int i = 0; i < 1000; ++i) {
    const int l = sample_length(lt, rng);
    CHECK((l >= 1 && l <= 8));
  }
}

TEST_CASE("length distribution validation") {
  CHECK_THROWS_AS(LengthDistribution::parse("uniform", 0, 3), Error);
  CHECK_THROWS_AS(LengthDistribution::parse("uniform", 4, 3), Error);
  CHECK_THROWS_AS(LengthDistribution::parse("zipf", 1, 3), Error);
  CHECK_THROWS_AS(LengthDistribution::parse("longtail", 1, 3, 1.5), Error);
}

TEST_CASE("build_corpus: one-sample corpus and manifest round trip") {
  const auto a = GlyphAlphabet::generate(10, 0);
  const fs::path dir = scratch("one");
  const auto rows = build_corpus(1, LengthDistribution::parse("uniform", 1, 8), a, 4, dir);
  REQUIRE(rows.size() == 1);
  std::ifstream m(dir / "manifest.tsv");
  std::string header, line;
  std::getline(m, header);
  CHECK(header == "id\tlabel\tvalid_width\tfilename");
  int lines = 0;
  while (std::getline(m, line)) lines += !line.empty();
  CHECK(lines == 1);
  const Corpus c = load_corpus(dir);
  REQUIRE(c.samples.size() == 1);
  CHECK(c.samples[0].label == rows[0].label);
  CHECK(c.samples[0].valid_width == rows[0].valid_width);
  CHECK(c.alphabet.glyph(7) == a.glyph(7));
  // 8-bit quantisation of the stored image
  const Sample again = render_sample(rows[0].label, a, 0);
  CHECK(c.samples[0].image.cols() >= c.samples[0].valid_width);
  (void)again;
  fs::remove_all(dir);
}

TEST_CASE("build_corpus: uniform histogram passes a chi-square test") {
  const auto a = GlyphAlphabet::generate(10, 0);
  const fs::path dir = scratch("uniform");
  const auto rows = build_corpus(1000, LengthDistribution::parse("uniform", 1, 8), a, 11, dir);
  std::map<int, int> counts;
  std::map<int, int> symbols;
  for (const auto& r : rows) {
    ++counts[static_cast<int>(r.label.size())];
    for (int s : r.label) ++symbols[s];
  }
  double chi2 = 0;
  for (int l = 1; l <= 8; ++l) {
    const double d = counts[l] - 125.0;
    chi2 += d * d / 125.0;
    CHECK(std::abs(counts[l] - 125.0) < 3 * std::sqrt(1000 * 0.125 * 0.875));
  }
  CHECK(chi2 < 24.32);  // 7 degrees of freedom, p = 0.001
  CHECK(symbols.size() == 10);
  fs::remove_all(dir);
}

TEST_CASE("build_corpus: long-tail histogram decreases with length") {
  const auto a = GlyphAlphabet::generate(10, 0);
  const fs::path dir = scratch("longtail");
  const auto dist = LengthDistribution::parse("longtail", 1, 8);
  const auto rows = build_corpus(10000, dist, a, 12, dir);
  std::map<int, int> counts;
  for (const auto& r : rows) ++counts[static_cast<int>(r.label.size())];
  for (int l = 1; l < 8; ++l) {
    const double sigma = std::sqrt(counts[l] + counts[l + 1] + 1.0);
    CHECK(counts[l + 1] <= counts[l] + 3 * sigma);
  }
  for (int l = 1; l <= 8; ++l) {
    const double p = dist.probability(l);
    CHECK(std::abs(counts[l] - 10000 * p) < 4 * std::sqrt(10000 * p * (1 - p)));
  }
  fs::remove_all(dir);
}

TEST_CASE("load_corpus names the offending manifest row") {
  const auto a = GlyphAlphabet::generate(10, 0);
  const fs::path dir = scratch("bad");
  build_corpus(3, LengthDistribution::parse("uniform", 1, 3), a, 1, dir);
  std::ifstream in(dir / "manifest.tsv");
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  in.close();
  lines[2] = "1\t3 4\t9999\timg_000001.pgm";
  std::ofstream out(dir / "manifest.tsv");
  for (const auto& l : lines) out << l << '\n';
  out.close();
  const std::string msg = error_of([&] { load_corpus(dir); });
  CHECK(msg.find("row 3") != std::string::npos);
  CHECK(msg.find("9999") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("PGM round trip quantises to 8 bits") {
  Matrix img(32, 5);
  for (Index i = 0; i < img.size(); ++i) img.data()[i] = static_cast<double>(i % 11) / 10.0;
  const fs::path f = fs::temp_directory_path() / "lister_roundtrip.pgm";
  write_pgm(f, img);
  const Matrix back = read_pgm(f);
  REQUIRE(back.rows() == 32);
  REQUIRE(back.cols() == 5);
  CHECK((back - img).cwiseAbs().maxCoeff() <= 0.5 / 255 + 1e-12);
  fs::remove(f);
}

TEST_CASE("label text round trip") {
  CHECK(label_to_string({3, 1, 4}) == "3 1 4");
  CHECK(parse_label("3 1 4") == std::vector<int>{3, 1, 4});
}
