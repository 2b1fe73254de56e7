// SPDX-License-Identifier: Apache-2.0
#include "lister/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "lister/checkpoint.hpp"
#include "lister/optim.hpp"

namespace lister::harness {

namespace {

/// Runs body(i) for i in [0, n) on up to `threads` workers, contiguous chunks per worker.
template <class Fn>
void parallel_chunks(std::size_t n, int threads, Fn&& body) {
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(static_cast<std::size_t>(threads), n));
  if (workers == 1) {
    body(std::size_t{0}, std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t per = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t b = w * per, e = std::min(n, b + per);
    pool.emplace_back([&, w, b, e] {
      try {
        body(w, b, e);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

nlohmann::json train_fingerprint(const TrainConfig& cfg) {
  return {{"model", cfg.model.to_json()},
          {"train_corpus", cfg.train_corpus.string()},
          {"batch_size", cfg.batch_size},
          {"epochs", cfg.epochs},
          {"lr", cfg.lr},
          {"warmup_steps", cfg.warmup_steps},
          {"lr_floor", cfg.lr_floor},
          {"weight_decay", cfg.weight_decay},
          {"grad_clip", cfg.grad_clip},
          {"seed", cfg.seed},
          {"preprocess", to_string(cfg.input.mode)},
          {"resize_width", cfg.input.resize_width},
          {"max_batch_width", cfg.input.max_batch_width},
          {"bucket", cfg.bucket},
          {"max_train_len", cfg.max_train_len}};
}

nlohmann::json alphabet_json(const corpus::GlyphAlphabet& a) {
  nlohmann::json out = nlohmann::json::array();
  for (int s = 0; s < a.size(); ++s) {
    std::string bits;
    for (auto b : a.glyph(s)) bits += b ? '1' : '0';
    out.push_back(bits);
  }
  return out;
}

std::string fmt(Real v, int precision = 6) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

}  // namespace

Preprocess parse_preprocess(const std::string& text) {
  if (text == "pad") return Preprocess::kPad;
  if (text == "resize") return Preprocess::kResize;
  throw Error("unknown preprocessing mode '" + text + "' (expected pad or resize)");
}

std::string to_string(Preprocess p) { return p == Preprocess::kPad ? "pad" : "resize"; }

Matrix resize_width(const Matrix& image, int valid_width, int width) {
  if (valid_width < 1 || valid_width > image.cols()) throw Error("resize: valid width out of range");
  if (width < 1) throw Error("resize: target width must be positive");
  Matrix out(image.rows(), width);
  const Real scale = static_cast<Real>(valid_width) / static_cast<Real>(width);
  for (int x = 0; x < width; ++x) {
    // Sample at pixel centres.
    const Real src = std::clamp((x + 0.5) * scale - 0.5, 0.0, static_cast<Real>(valid_width - 1));
    const int x0 = static_cast<int>(std::floor(src));
    const int x1 = std::min(x0 + 1, valid_width - 1);
    const Real t = src - x0;
    out.col(x) = (1.0 - t) * image.col(x0) + t * image.col(x1);
  }
  return out;
}

corpus::Sample prepare(const corpus::Sample& s, const InputOptions& opts) {
  corpus::Sample out;
  out.label = s.label;
  int target = 0;
  if (opts.mode == Preprocess::kResize) target = opts.resize_width;
  else if (opts.max_batch_width > 0 && s.valid_width > opts.max_batch_width) target = opts.max_batch_width;
  if (target > 0) {
    out.image = resize_width(s.image, s.valid_width, target);
    out.valid_width = target;
  } else {
    out.image = s.image.leftCols(s.valid_width);
    out.valid_width = s.valid_width;
  }
  return out;
}

Matrix pad_to_width(const Matrix& image, int valid_width, int width) {
  if (width < valid_width) throw Error("cannot pad to a width below the valid width");
  Matrix out = Matrix::Constant(image.rows(), width, corpus::kPadValue);
  out.leftCols(valid_width) = image.leftCols(valid_width);
  return out;
}

std::vector<Batch> make_batches(const std::vector<int>& widths, int batch_size, std::uint64_t seed, bool shuffle,
                                bool bucket) {
  if (batch_size < 1) throw Error("batch size must be positive");
  std::vector<std::size_t> order(widths.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  if (shuffle) std::shuffle(order.begin(), order.end(), rng);
  if (bucket) {
    const std::size_t window = static_cast<std::size_t>(batch_size) * 16;
    for (std::size_t b = 0; b < order.size(); b += window) {
      const auto e = order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + window));
      std::stable_sort(order.begin() + static_cast<std::ptrdiff_t>(b), e,
                       [&](std::size_t x, std::size_t y) { return widths[x] < widths[y]; });
    }
  }
  std::vector<Batch> batches;
  for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(batch_size)) {
    Batch batch;
    for (std::size_t i = b; i < std::min(order.size(), b + static_cast<std::size_t>(batch_size)); ++i) {
      batch.indices.push_back(order[i]);
      batch.width = std::max(batch.width, widths[order[i]]);
    }
    batches.push_back(std::move(batch));
  }
  if (shuffle && bucket) std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

void TrainConfig::validate() const {
  model.validate();
  if (batch_size < 1) throw Error("batch_size must be positive");
  if (epochs < 1) throw Error("epochs must be positive");
  if (threads < 1) throw Error("threads must be positive");
  if (grad_clip < 0) throw Error("grad_clip must be non-negative");
  if (weight_decay < 0) throw Error("weight_decay must be non-negative");
  if (input.mode == Preprocess::kResize && input.resize_width < 4) throw Error("resize_width must be at least 4");
  if (input.max_batch_width < 0) throw Error("max_batch_width must be non-negative");
  optim::Schedule{lr, lr_floor, warmup_steps, warmup_steps + 1}.validate();
}

TrainResult train_model(const TrainConfig& cfg, const corpus::Corpus& data, std::ostream* loss_csv, std::ostream* log) {
  cfg.validate();
  std::vector<corpus::Sample> samples;
  for (const auto& s : data.samples)
    if (cfg.max_train_len == 0 || static_cast<int>(s.label.size()) <= cfg.max_train_len)
      samples.push_back(prepare(s, cfg.input));
  if (samples.empty()) throw Error("training corpus is empty after length filtering");

  ModelConfig mc = cfg.model;
  mc.num_symbols = data.alphabet.size();
  TrainResult result{Recognizer(mc, cfg.seed), {}};
  Recognizer& model = result.model;
  const auto params = model.parameters();

  std::vector<int> widths;
  for (const auto& s : samples) widths.push_back(s.valid_width);
  const long per_epoch = static_cast<long>((samples.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
                                           static_cast<std::size_t>(cfg.batch_size));
  const optim::Schedule schedule{cfg.lr, cfg.lr_floor, cfg.warmup_steps, per_epoch * cfg.epochs};
  schedule.validate();
  optim::AdamW opt({.weight_decay = cfg.weight_decay});

  if (loss_csv) *loss_csv << "step,rec,eos,ent,total\n" << std::setprecision(8);
  const auto start = std::chrono::steady_clock::now();
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batches = make_batches(widths, cfg.batch_size, cfg.seed * 1000003ULL + static_cast<std::uint64_t>(epoch),
                                      true, cfg.bucket);
    for (const Batch& batch : batches) {
      const std::size_t workers = static_cast<std::size_t>(std::max(1, cfg.threads));
      std::vector<ad::GradientSet> grads(workers);
      std::vector<objectives::LossTerms> sums(workers);
      std::vector<long> feasible(workers, 0);
      parallel_chunks(batch.indices.size(), cfg.threads, [&](std::size_t w, std::size_t b, std::size_t e) {
        for (std::size_t k = b; k < e; ++k) {
          const corpus::Sample& s = samples[batch.indices[k]];
          ad::Tape tape;
          const auto out = model.forward_train(tape, pad_to_width(s.image, s.valid_width, batch.width),
                                               s.valid_width, s.label);
          if (!out.feasible) continue;
          tape.backward(out.loss, grads[w]);
          sums[w].rec += out.terms.rec;
          sums[w].eos += out.terms.eos;
          sums[w].ent += out.terms.ent;
          sums[w].total += out.terms.total;
          ++feasible[w];
        }
      });
      for (std::size_t w = 1; w < workers; ++w) {
        grads[0].add(grads[w]);
        sums[0].rec += sums[w].rec;
        sums[0].eos += sums[w].eos;
        sums[0].ent += sums[w].ent;
        sums[0].total += sums[w].total;
        feasible[0] += feasible[w];
      }
      const long n = feasible[0];
      result.summary.skipped += static_cast<long>(batch.indices.size()) - n;
      objectives::LossTerms mean;
      if (n > 0) {
        const Real inv = 1.0 / static_cast<Real>(n);
        grads[0].scale(inv);
        mean = {sums[0].rec * inv, sums[0].eos * inv, sums[0].ent * inv, sums[0].total * inv};
        if (cfg.grad_clip > 0) optim::clip_grad_norm(grads[0], cfg.grad_clip);
        opt.step(params, grads[0], schedule.at(step));
      }
      if (step == 0) result.summary.first = mean;
      result.summary.last = mean;
      if (loss_csv) *loss_csv << step << ',' << mean.rec << ',' << mean.eos << ',' << mean.ent << ',' << mean.total << '\n';
      if (log && cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == schedule.total_steps)) {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        *log << "epoch " << epoch + 1 << "/" << cfg.epochs << " step " << step + 1 << "/" << schedule.total_steps
             << " lr " << fmt(schedule.at(step), 3) << " loss " << fmt(mean.total, 5) << " (rec " << fmt(mean.rec, 4)
             << ") " << fmt(secs, 4) << "s" << std::endl;
      }
      ++step;
    }
  }
  result.summary.steps = step;
  result.summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

TrainSummary train(const TrainConfig& cfg, std::ostream* log) {
  cfg.validate();
  const corpus::Corpus data = corpus::load_corpus(cfg.train_corpus);
  std::error_code ec;
  std::filesystem::create_directories(cfg.out_dir, ec);
  if (ec) throw Error("cannot create " + cfg.out_dir.string() + ": " + ec.message());
  std::ofstream loss(cfg.out_dir / "loss.csv");
  if (!loss) throw Error("cannot write " + (cfg.out_dir / "loss.csv").string());
  TrainResult r = train_model(cfg, data, &loss, log);
  nlohmann::json meta;
  meta["train"] = train_fingerprint(cfg);
  meta["alphabet"] = alphabet_json(data.alphabet);
  meta["summary"] = {{"steps", r.summary.steps},
                     {"skipped_samples", r.summary.skipped},
                     {"seconds", r.summary.seconds},
                     {"first_total", r.summary.first.total},
                     {"last_total", r.summary.last.total}};
  r.model.save(cfg.out_dir, meta);
  return r.summary;
}

std::vector<Prediction> predict_corpus(const Recognizer& model, const corpus::Corpus& data, const EvalOptions& opts) {
  if (opts.batch_size < 1) throw Error("batch size must be positive");
  std::vector<corpus::Sample> prepared;
  prepared.reserve(data.samples.size());
  for (const auto& s : data.samples) prepared.push_back(prepare(s, opts.input));
  std::vector<int> widths;
  for (const auto& s : prepared) widths.push_back(s.valid_width);
  std::vector<int> padded(prepared.size());
  for (const Batch& b : make_batches(widths, opts.batch_size, 0, false, false))
    for (std::size_t i : b.indices) padded[i] = opts.solo ? widths[i] : b.width;

  std::vector<Prediction> out(prepared.size());
  parallel_chunks(prepared.size(), opts.threads, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const auto& s = prepared[i];
      out[i] = model.predict(pad_to_width(s.image, s.valid_width, padded[i]), s.valid_width, opts.sharpen);
    }
  });
  return out;
}

LengthReport::Aggregate LengthReport::seen() const {
  Aggregate a;
  for (const auto& b : bins)
    if (b.length <= seen_max) a.count += b.count, a.correct += b.correct;
  return a;
}

LengthReport::Aggregate LengthReport::unseen() const {
  Aggregate a;
  for (const auto& b : bins)
    if (b.length > seen_max) a.count += b.count, a.correct += b.correct;
  return a;
}

LengthReport::Aggregate LengthReport::total() const {
  Aggregate a;
  for (const auto& b : bins) a.count += b.count, a.correct += b.correct;
  return a;
}

const LengthBin* LengthReport::bin(int length) const {
  for (const auto& b : bins)
    if (b.length == length) return &b;
  return nullptr;
}

LengthReport LengthReport::from_outcomes(const std::string& name, int seen_max, const std::vector<int>& lengths,
                                         const std::vector<bool>& correct) {
  if (lengths.size() != correct.size()) throw Error("lengths and outcomes differ in size");
  std::map<int, LengthBin> bins;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    LengthBin& b = bins[lengths[i]];
    b.length = lengths[i];
    ++b.count;
    if (correct[i]) ++b.correct;
  }
  LengthReport r;
  r.name = name;
  r.seen_max = seen_max;
  for (auto& [len, b] : bins) r.bins.push_back(b);
  return r;
}

void LengthReport::write_csv(const std::filesystem::path& file) const {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  out << "length,count,correct,accuracy,split\n" << std::setprecision(6) << std::fixed;
  for (const auto& b : bins)
    out << b.length << ',' << b.count << ',' << b.correct << ',' << b.accuracy() << ','
        << (b.length <= seen_max ? "seen" : "unseen") << '\n';
  const std::pair<const char*, Aggregate> aggs[] = {{"seen", seen()}, {"unseen", unseen()}, {"total", total()}};
  for (const auto& [label, a] : aggs)
    out << label << ',' << a.count << ',' << a.correct << ',' << a.accuracy() << ",aggregate\n";
}

LengthReport LengthReport::read_csv(const std::filesystem::path& file, const std::string& name) {
  std::ifstream in(file);
  if (!in) throw Error("cannot read report " + file.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("length,count,correct,accuracy", 0) != 0)
    throw Error(file.string() + ": not a length report (bad header)");
  LengthReport r;
  r.name = name.empty() ? file.stem().string() : name;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() < 5) throw Error(file.string() + ":" + std::to_string(lineno) + ": expected 5 fields");
    if (f[4] == "aggregate") continue;
    LengthBin b;
    try {
      b.length = std::stoi(f[0]);
      b.count = std::stol(f[1]);
      b.correct = std::stol(f[2]);
    } catch (const std::exception&) {
      throw Error(file.string() + ":" + std::to_string(lineno) + ": malformed row");
    }
    if (b.count < 0 || b.correct < 0 || b.correct > b.count)
      throw Error(file.string() + ":" + std::to_string(lineno) + ": inconsistent counts");
    if (f[4] == "seen") r.seen_max = std::max(r.seen_max, b.length);
    r.bins.push_back(b);
  }
  std::sort(r.bins.begin(), r.bins.end(), [](const LengthBin& a, const LengthBin& b) { return a.length < b.length; });
  return r;
}

bool is_correct(const Prediction& p, const std::vector<int>& label) { return p.terminated && p.symbols == label; }

LengthReport evaluate_by_length(const Recognizer& model, const corpus::Corpus& data, int seen_max,
                                const EvalOptions& opts, const std::string& name,
                                std::vector<Prediction>* predictions) {
  if (data.samples.empty()) throw Error("evaluation corpus is empty");
  if (data.alphabet.size() != model.config().num_symbols)
    throw Error("corpus has " + std::to_string(data.alphabet.size()) + " symbols but the model was trained on " +
                std::to_string(model.config().num_symbols));
  auto preds = predict_corpus(model, data, opts);
  std::vector<int> lengths;
  std::vector<bool> correct;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    lengths.push_back(static_cast<int>(data.samples[i].label.size()));
    correct.push_back(is_correct(preds[i], data.samples[i].label));
  }
  if (predictions) *predictions = std::move(preds);
  return LengthReport::from_outcomes(name, seen_max, lengths, correct);
}

void write_predictions_csv(const std::filesystem::path& file, const corpus::Corpus& data,
                           const std::vector<Prediction>& predictions) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  out << "id,label,prediction,correct,terminated\n";
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const int id = i < data.rows.size() ? data.rows[i].id : static_cast<int>(i);
    out << id << ',' << corpus::label_to_string(data.samples[i].label) << ','
        << corpus::label_to_string(predictions[i].symbols) << ','
        << (is_correct(predictions[i], data.samples[i].label) ? 1 : 0) << ',' << (predictions[i].terminated ? 1 : 0)
        << '\n';
  }
}

void write_attention_dump(const std::filesystem::path& dir, const corpus::Corpus& data,
                          const std::vector<Prediction>& predictions) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const int id = i < data.rows.size() ? data.rows[i].id : static_cast<int>(i);
    char name[32];
    std::snprintf(name, sizeof name, "attn_%06d.txt", id);
    std::ofstream out(dir / name);
    if (!out) throw Error("cannot write " + (dir / name).string());
    out << std::setprecision(6);
    const Matrix& a = predictions[i].attention;
    for (Index r = 0; r < a.rows(); ++r) {
      for (Index c = 0; c < a.cols(); ++c) out << (c ? " " : "") << a(r, c);
      out << '\n';
    }
  }
}

void check_comparable(const std::vector<LengthReport>& reports) {
  if (reports.empty()) throw Error("compare needs at least one report");
  const LengthReport& ref = reports.front();
  for (std::size_t k = 1; k < reports.size(); ++k) {
    std::vector<int> bad;
    std::map<int, std::pair<long, long>> counts;  // length -> (count in ref, count in other)
    for (const auto& b : ref.bins) counts[b.length].first = b.count + 1;
    for (const auto& b : reports[k].bins) counts[b.length].second = b.count + 1;
    for (const auto& [len, c] : counts)
      if (c.first != c.second) bad.push_back(len);
    if (!bad.empty()) {
      std::string lens;
      for (int l : bad) lens += (lens.empty() ? "" : ", ") + std::to_string(l);
      throw Error("reports '" + ref.name + "' and '" + reports[k].name +
                  "' come from different eval corpora; mismatched lengths: " + lens);
    }
  }
}

void write_comparison_csv(const std::filesystem::path& file, const std::vector<LengthReport>& reports) {
  check_comparable(reports);
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  out << "length";
  for (const auto& r : reports) out << ',' << r.name;
  out << '\n' << std::setprecision(6) << std::fixed;
  for (const auto& b : reports.front().bins) {
    out << b.length;
    for (const auto& r : reports) out << ',' << r.bin(b.length)->accuracy();
    out << '\n';
  }
}

void plot_comparison(const std::filesystem::path& csv, const std::filesystem::path& svg, const std::string& title) {
  std::ifstream in(csv);
  if (!in) throw Error("cannot read " + csv.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(csv.string() + ": empty file");
  const auto header = split(line, ',');
  if (header.size() < 2 || header[0] != "length") throw Error(csv.string() + ": expected a length,<series>... header");
  std::vector<Real> xs;
  std::vector<std::vector<Real>> ys(header.size() - 1);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != header.size()) throw Error(csv.string() + ": ragged row '" + line + "'");
    try {
      xs.push_back(std::stod(f[0]));
      for (std::size_t k = 1; k < f.size(); ++k) ys[k - 1].push_back(std::stod(f[k]));
    } catch (const std::exception&) {
      throw Error(csv.string() + ": non-numeric row '" + line + "'");
    }
  }
  if (xs.empty()) throw Error(csv.string() + ": no data rows");

  const double W = 760, H = 440, left = 60, right = 170, top = 40, bottom = 50;
  const double pw = W - left - right, ph = H - top - bottom;
  const double xmin = *std::min_element(xs.begin(), xs.end()), xmax = *std::max_element(xs.begin(), xs.end());
  auto px = [&](double x) { return left + (xmax > xmin ? (x - xmin) / (xmax - xmin) : 0.5) * pw; };
  auto py = [&](double y) { return top + (1.0 - std::clamp(y, 0.0, 1.0)) * ph; };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

  std::ofstream out(svg);
  if (!out) throw Error("cannot write " + svg.string());
  out << std::fixed << std::setprecision(1);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << left + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  for (int i = 0; i <= 5; ++i) {
    const double y = py(i / 5.0);
    out << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << left + pw << "\" y2=\"" << y
        << "\" stroke=\"#ddd\"/>\n";
    out << "<text x=\"" << left - 8 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << std::setprecision(1)
        << i / 5.0 << "</text>\n";
  }
  for (double x : xs)
    out << "<text x=\"" << px(x) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">"
        << static_cast<long>(x) << "</text>\n";
  out << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#333\"/>\n";
  out << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">label length</text>\n";
  out << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">word accuracy</text>\n";
  for (std::size_t k = 0; k < ys.size(); ++k) {
    const char* color = colors[k % 8];
    out << "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" << color << "\" points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i) out << px(xs[i]) << ',' << py(ys[k][i]) << ' ';
    out << "\"/>\n";
    for (std::size_t i = 0; i < xs.size(); ++i)
      out << "<circle cx=\"" << px(xs[i]) << "\" cy=\"" << py(ys[k][i]) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    const double ly = top + 10 + 20.0 * static_cast<double>(k);
    out << "<line x1=\"" << left + pw + 15 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 40 << "\" y2=\"" << ly
        << "\" stroke-width=\"2\" stroke=\"" << color << "\"/>\n";
    out << "<text x=\"" << left + pw + 46 << "\" y=\"" << ly + 4 << "\">" << header[k + 1] << "</text>\n";
  }
  out << "</svg>\n";
}

const std::vector<std::string>& grid_entries() {
  static const std::vector<std::string> entries = {"nd", "nd_as", "nd_fem", "nd_fem_as", "ctc", "pat"};
  return entries;
}

void ExtrapolationConfig::validate() const {
  train.validate();
  if (seen_max < 1) throw Error("seen_max must be positive");
  if (grid.empty()) throw Error("extrapolation grid is empty");
  for (const auto& g : grid)
    if (std::find(grid_entries().begin(), grid_entries().end(), g) == grid_entries().end())
      throw Error("unknown grid entry '" + g + "' (expected nd, nd_as, nd_fem, nd_fem_as, ctc or pat)");
}

std::vector<LengthReport> extrapolation_run(const ExtrapolationConfig& cfg, std::ostream* log) {
  cfg.validate();
  const corpus::Corpus eval = corpus::load_corpus(cfg.eval_corpus);
  if (eval.samples.empty()) throw Error("evaluation corpus is empty");
  const std::filesystem::path root = cfg.train.out_dir;
  std::filesystem::create_directories(root / "models");
  std::filesystem::create_directories(root / "reports");

  auto model_of = [](const std::string& entry) -> std::string {
    if (entry == "nd" || entry == "nd_as") return "nd";
    if (entry == "nd_fem" || entry == "nd_fem_as") return "nd_fem";
    return entry;
  };
  std::map<std::string, Recognizer> models;
  nlohmann::json summary;
  for (const auto& entry : cfg.grid) {
    const std::string id = model_of(entry);
    if (models.count(id)) continue;
    TrainConfig tc = cfg.train;
    tc.out_dir = root / "models" / id;
    tc.max_train_len = cfg.seen_max;
    if (id == "nd" || id == "nd_fem") {
      tc.model.decoder = DecoderKind::kNeighbor;
      tc.model.fem.iterations = id == "nd" ? 1 : std::max(2, cfg.train.model.fem.iterations);
    } else {
      tc.model.decoder = parse_decoder(id);
    }
    bool reuse = false;
    if (cfg.reuse && std::filesystem::exists(tc.out_dir / "meta.json")) {
      const auto meta = checkpoint::load(tc.out_dir).meta;
      reuse = meta.contains("train") && meta["train"] == train_fingerprint(tc);
    }
    if (reuse) {
      if (log) *log << "[" << id << "] reusing checkpoint " << tc.out_dir.string() << std::endl;
    } else {
      if (log) *log << "[" << id << "] training" << std::endl;
      const TrainSummary s = train(tc, log);
      summary["training"][id] = {{"seconds", s.seconds}, {"steps", s.steps}, {"last_total", s.last.total}};
    }
    models.emplace(id, Recognizer::load(tc.out_dir));
  }

  std::vector<LengthReport> reports;
  for (const auto& entry : cfg.grid) {
    EvalOptions eo = cfg.eval;
    eo.input = cfg.train.input;
    eo.sharpen.enabled = entry == "nd_as" || entry == "nd_fem_as";
    const auto t0 = std::chrono::steady_clock::now();
    LengthReport r = evaluate_by_length(models.at(model_of(entry)), eval, cfg.seen_max, eo, entry);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.write_csv(root / "reports" / (entry + ".csv"));
    summary["reports"][entry] = {{"seen", r.seen().accuracy()},
                                 {"unseen", r.unseen().accuracy()},
                                 {"total", r.total().accuracy()},
                                 {"eval_seconds", secs}};
    if (log)
      *log << "[" << entry << "] seen " << fmt(100 * r.seen().accuracy(), 4) << "%  unseen "
           << fmt(100 * r.unseen().accuracy(), 4) << "%  total " << fmt(100 * r.total().accuracy(), 4) << "%"
           << std::endl;
    reports.push_back(std::move(r));
  }
  write_comparison_csv(root / "comparison.csv", reports);
  plot_comparison(root / "comparison.csv", root / "comparison.svg");
  std::ofstream(root / "summary.json") << summary.dump(2) << '\n';
  return reports;
}

}  // namespace lister::harness
