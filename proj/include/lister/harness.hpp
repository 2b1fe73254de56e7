// SPDX-License-Identifier: Apache-2.0
//
// Training loop, length-binned evaluation, the extrapolation grid and the
// comparison/plot artifacts behind the command-line tool.
#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "lister/corpus.hpp"
#include "lister/model.hpp"

namespace lister::harness {

enum class Preprocess { kPad, kResize };

Preprocess parse_preprocess(const std::string& text);
std::string to_string(Preprocess p);

/// How an image enters the model.
struct InputOptions {
  Preprocess mode = Preprocess::kPad;
  int resize_width = 64;     // mode=resize: every image is resampled to this width
  int max_batch_width = 0;   // mode=pad: wider images are resampled down to this width (0 = no cap)
};

/// Linear resampling of the first `valid_width` columns to `width` columns.
Matrix resize_width(const Matrix& image, int valid_width, int width);

/// The image and valid width after applying `opts` (before batch padding).
corpus::Sample prepare(const corpus::Sample& s, const InputOptions& opts);

/// Right-pads (or crops padding off) `image` to `width` columns using the pad value.
Matrix pad_to_width(const Matrix& image, int valid_width, int width);

struct Batch {
  std::vector<std::size_t> indices;
  int width = 0;  // common padded width
};

/// Shuffled batches; with `bucket` set, samples of similar width are grouped
/// inside windows of 16 batches to limit padding.
std::vector<Batch> make_batches(const std::vector<int>& widths, int batch_size, std::uint64_t seed, bool shuffle,
                                bool bucket);

struct TrainConfig {
  ModelConfig model;
  std::filesystem::path train_corpus;
  std::filesystem::path out_dir;  // checkpoint + loss.csv
  int batch_size = 64;
  int epochs = 10;
  Real lr = 1e-3;
  long warmup_steps = 200;
  Real lr_floor = 5e-7;
  Real weight_decay = 0.05;
  Real grad_clip = 0.0;  // 0 disables clipping
  std::uint64_t seed = 0;
  InputOptions input;
  bool bucket = false;  // width-bucketed batches make ND training unstable
  int max_train_len = 0;  // drop samples with longer labels (0 keeps all)
  int threads = 1;
  int log_every = 50;

  void validate() const;
};

struct TrainSummary {
  long steps = 0;
  long skipped = 0;  // samples without a feasible alignment (CTC)
  objectives::LossTerms first, last;
  double seconds = 0;
};

struct TrainResult {
  Recognizer model;
  TrainSummary summary;
};

/// Trains on an in-memory corpus. `loss_csv` (optional) receives one
/// `step,rec,eos,ent,total` row per optimizer step; `log` gets progress lines.
TrainResult train_model(const TrainConfig& cfg, const corpus::Corpus& data, std::ostream* loss_csv = nullptr,
                        std::ostream* log = nullptr);

/// Loads cfg.train_corpus, trains, and writes the checkpoint and loss.csv into cfg.out_dir.
TrainSummary train(const TrainConfig& cfg, std::ostream* log = nullptr);

struct EvalOptions {
  nd::SharpenConfig sharpen;
  InputOptions input;
  int batch_size = 64;
  int threads = 1;
  bool solo = false;  // evaluate each sample unpadded instead of in padded batches
};

/// Predictions in corpus order. Samples are grouped into consecutive padded batches.
std::vector<Prediction> predict_corpus(const Recognizer& model, const corpus::Corpus& data, const EvalOptions& opts);

struct LengthBin {
  int length = 0;
  long count = 0;
  long correct = 0;
  Real accuracy() const { return count ? static_cast<Real>(correct) / static_cast<Real>(count) : 0.0; }
};

struct LengthReport {
  std::string name;
  int seen_max = 0;
  std::vector<LengthBin> bins;  // ascending length

  struct Aggregate {
    long count = 0, correct = 0;
    Real accuracy() const { return count ? static_cast<Real>(correct) / static_cast<Real>(count) : 0.0; }
  };
  Aggregate seen() const;
  Aggregate unseen() const;
  Aggregate total() const;
  const LengthBin* bin(int length) const;

  /// Builds bins from per-sample label lengths and correctness flags.
  static LengthReport from_outcomes(const std::string& name, int seen_max, const std::vector<int>& lengths,
                                    const std::vector<bool>& correct);

  /// Header `length,count,correct,accuracy,split`; per-length rows (split
  /// seen/unseen) then the seen, unseen and total aggregates (split aggregate).
  void write_csv(const std::filesystem::path& file) const;
  static LengthReport read_csv(const std::filesystem::path& file, const std::string& name = "");
};

/// Exact string match; an unterminated decode is always wrong.
bool is_correct(const Prediction& p, const std::vector<int>& label);

LengthReport evaluate_by_length(const Recognizer& model, const corpus::Corpus& data, int seen_max,
                                const EvalOptions& opts, const std::string& name = "model",
                                std::vector<Prediction>* predictions = nullptr);

/// `id,label,prediction,correct,terminated` for every sample.
void write_predictions_csv(const std::filesystem::path& file, const corpus::Corpus& data,
                           const std::vector<Prediction>& predictions);
/// One text file per sample (`attn_<id>.txt`) under `dir`: the attention
/// rows, one per line, space separated.
void write_attention_dump(const std::filesystem::path& dir, const corpus::Corpus& data,
                          const std::vector<Prediction>& predictions);

/// Fails unless every report covers the same lengths with the same sample counts.
void check_comparable(const std::vector<LengthReport>& reports);
/// `length,<name>...` accuracy matrix.
void write_comparison_csv(const std::filesystem::path& file, const std::vector<LengthReport>& reports);
/// Line plot (SVG) of every accuracy column of a comparison CSV against length.
void plot_comparison(const std::filesystem::path& csv, const std::filesystem::path& svg,
                     const std::string& title = "word accuracy by label length");

struct ExtrapolationConfig {
  TrainConfig train;  // train.out_dir is the run directory
  std::filesystem::path eval_corpus;
  int seen_max = 8;
  std::vector<std::string> grid = {"nd", "nd_as", "nd_fem_as", "ctc", "pat"};
  EvalOptions eval;
  bool reuse = true;  // keep an existing checkpoint instead of retraining

  void validate() const;
};

/// Entries accepted in ExtrapolationConfig::grid.
const std::vector<std::string>& grid_entries();

/// Trains the models the grid needs (once each), evaluates every entry on the
/// eval corpus and writes reports/, comparison.csv, comparison.svg and summary.json.
std::vector<LengthReport> extrapolation_run(const ExtrapolationConfig& cfg, std::ostream* log = nullptr);

}  // namespace lister::harness
