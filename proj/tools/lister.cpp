// SPDX-License-Identifier: Apache-2.0
//
// lister: corpus generation, training, evaluation, the extrapolation grid and
// report comparison. Every subcommand accepts `--config FILE` (key=value
// lines); explicit flags and `--set key=value` override file entries.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lister/checkpoint.hpp"
#include "lister/config.hpp"
#include "lister/corpus.hpp"
#include "lister/harness.hpp"
#include "lister/model.hpp"

namespace fs = std::filesystem;
using namespace lister;

namespace {

struct Key {
  std::string name;
  std::string help;
};

/// A subcommand whose options all resolve through a KeyValueConfig.
class Command {
 public:
  Command(CLI::App& parent, const std::string& name, const std::string& help) : app_(parent.add_subcommand(name, help)) {
    app_->add_option("--config", config_file_, "key=value config file")->check(CLI::ExistingFile);
    app_->add_option("--set", sets_, "override any config key (key=value), repeatable");
  }

  void keys(const std::vector<Key>& keys) {
    for (const auto& k : keys) {
      std::string flag = k.name;
      std::replace(flag.begin(), flag.end(), '_', '-');
      known_.insert(k.name);
      auto* opt = app_->add_option("--" + flag, values_[k.name], k.help);
      options_[k.name] = opt;
    }
  }

  CLI::App* app() { return app_; }

  KeyValueConfig resolve() {
    KeyValueConfig cfg = config_file_.empty() ? KeyValueConfig{} : KeyValueConfig::load(config_file_);
    for (const auto& [key, opt] : options_)
      if (opt->count() > 0) cfg.set(key, values_[key]);
    for (const auto& s : sets_) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw Error("--set expects key=value, got '" + s + "'");
      cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    cfg.require_known(known_);
    return cfg;
  }

 private:
  CLI::App* app_;
  std::string config_file_;
  std::vector<std::string> sets_;
  std::map<std::string, std::string> values_;
  std::map<std::string, CLI::Option*> options_;
  std::set<std::string> known_;
};

std::string require(const KeyValueConfig& c, const std::string& key) {
  if (!c.has(key) || c.get_string(key, "").empty()) throw Error("missing required setting '" + key + "'");
  return c.get_string(key, "");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

const std::vector<Key> kModelKeys = {
    {"decoder", "decoder head: nd, ctc or pat"},
    {"channels", "feature channels c"},
    {"stem_channels", "channels of the first encoder stage"},
    {"mid_channels", "channels of the middle encoder stages"},
    {"context_layers", "residual 1x3 encoder layers at feature resolution"},
    {"fem.iters", "decode passes (1 disables feature enhancement)"},
    {"fem.trans_layers", "self-attention layers per enhancement"},
    {"fem.conv_blocks", "convolution blocks per enhancement"},
    {"fem.window", "self-attention window size (odd)"},
    {"fem.heads", "self-attention heads"},
    {"fem.ffn_multiplier", "feed-forward width multiplier"},
    {"pat.max_len", "PAT query budget"},
    {"decoder.init_std", "init std of the bilinear neighbor projections"},
    {"loss.lambda_eos", "weight of the ending-location loss"},
    {"loss.lambda_ent", "weight of the attention-entropy loss"},
};

const std::vector<Key> kTrainKeys = {
    {"train_corpus", "training corpus directory"},
    {"out", "output directory"},
    {"batch_size", "samples per optimizer step"},
    {"epochs", "passes over the training corpus"},
    {"lr", "peak learning rate"},
    {"warmup", "linear warmup steps"},
    {"lr_floor", "final learning rate of the cosine decay"},
    {"weight_decay", "decoupled weight decay"},
    {"grad_clip", "global gradient-norm clip (0 disables)"},
    {"seed", "initialisation and shuffling seed"},
    {"preprocess", "pad or resize"},
    {"resize_width", "fixed width for preprocess=resize"},
    {"max_batch_width", "resample wider images down to this width (0 = no cap)"},
    {"bucket", "group similar widths into batches (true/false)"},
    {"max_train_len", "drop training samples with longer labels (0 keeps all)"},
    {"threads", "worker threads"},
    {"log_every", "progress line interval in steps"},
};

const std::vector<Key> kSharpenKeys = {
    {"sharpen", "attention sharpening at inference (true/false)"},
    {"as.lambda", "sharpening schedule slope"},
    {"as.mu", "sharpening exponent cap"},
    {"as.epsilon", "EOS stopping threshold"},
    {"as.max_steps", "decode step cap (0 = 4 x feature width)"},
};

std::vector<Key> concat(std::initializer_list<std::vector<Key>> parts) {
  std::vector<Key> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

ModelConfig model_config(const KeyValueConfig& c) {
  ModelConfig m;
  m.decoder = parse_decoder(c.get_string("decoder", "nd"));
  m.encoder.channels = c.get_int("channels", m.encoder.channels);
  m.encoder.stem_channels = c.get_int("stem_channels", m.encoder.stem_channels);
  m.encoder.mid_channels = c.get_int("mid_channels", m.encoder.mid_channels);
  m.encoder.context_layers = c.get_int("context_layers", m.encoder.context_layers);
  m.fem.iterations = c.get_int("fem.iters", m.fem.iterations);
  m.fem.trans_layers = c.get_int("fem.trans_layers", m.fem.trans_layers);
  m.fem.conv_blocks = c.get_int("fem.conv_blocks", m.fem.conv_blocks);
  m.fem.window = c.get_int("fem.window", m.fem.window);
  m.fem.heads = c.get_int("fem.heads", m.fem.heads);
  m.fem.ffn_multiplier = c.get_int("fem.ffn_multiplier", m.fem.ffn_multiplier);
  m.pat_max_len = c.get_int("pat.max_len", m.pat_max_len);
  m.decoder_init_std = c.get_real("decoder.init_std", m.decoder_init_std);
  m.loss.lambda_eos = c.get_real("loss.lambda_eos", m.loss.lambda_eos);
  m.loss.lambda_ent = c.get_real("loss.lambda_ent", m.loss.lambda_ent);
  return m;
}

harness::InputOptions input_options(const KeyValueConfig& c, harness::InputOptions base = {}) {
  base.mode = harness::parse_preprocess(c.get_string("preprocess", harness::to_string(base.mode)));
  base.resize_width = c.get_int("resize_width", base.resize_width);
  base.max_batch_width = c.get_int("max_batch_width", base.max_batch_width);
  return base;
}

harness::TrainConfig train_config(const KeyValueConfig& c) {
  harness::TrainConfig t;
  t.model = model_config(c);
  t.train_corpus = require(c, "train_corpus");
  t.out_dir = require(c, "out");
  t.batch_size = c.get_int("batch_size", t.batch_size);
  t.epochs = c.get_int("epochs", t.epochs);
  t.lr = c.get_real("lr", t.lr);
  t.warmup_steps = c.get_long("warmup", t.warmup_steps);
  t.lr_floor = c.get_real("lr_floor", t.lr_floor);
  t.weight_decay = c.get_real("weight_decay", t.weight_decay);
  t.grad_clip = c.get_real("grad_clip", t.grad_clip);
  t.seed = c.get_u64("seed", t.seed);
  t.input = input_options(c);
  t.bucket = c.get_bool("bucket", t.bucket);
  t.max_train_len = c.get_int("max_train_len", t.max_train_len);
  t.threads = c.get_int("threads", t.threads);
  t.log_every = c.get_int("log_every", t.log_every);
  return t;
}

nd::SharpenConfig sharpen_config(const KeyValueConfig& c) {
  nd::SharpenConfig s;
  s.enabled = c.get_bool("sharpen", s.enabled);
  s.lambda = c.get_real("as.lambda", s.lambda);
  s.mu = c.get_real("as.mu", s.mu);
  s.epsilon = c.get_real("as.epsilon", s.epsilon);
  s.max_steps = c.get_int("as.max_steps", s.max_steps);
  s.validate();
  return s;
}

int run_datagen(Command& cmd) {
  const KeyValueConfig c = cmd.resolve();
  const int n = c.get_int("n", 0);
  if (n < 1) throw Error("datagen needs --n >= 1");
  const auto dist = corpus::LengthDistribution::parse(c.get_string("dist", "uniform"), c.get_int("min_len", 1),
                                                      c.get_int("max_len", 8), c.get_real("decay", 0.7));
  const auto alphabet =
      corpus::GlyphAlphabet::generate(c.get_int("alphabet_size", 10), c.get_u64("alphabet_seed", 0));
  corpus::RenderOptions ro;
  ro.noise_amplitude = c.get_real("noise", ro.noise_amplitude);
  ro.max_jitter = c.get_int("jitter", ro.max_jitter);
  ro.max_spacing = c.get_int("spacing", ro.max_spacing);
  const fs::path out = require(c, "out");
  const auto rows = corpus::build_corpus(n, dist, alphabet, c.get_u64("seed", 0), out, ro);
  std::cout << "wrote " << rows.size() << " samples to " << out.string() << "\n";
  return 0;
}

int run_train(Command& cmd) {
  const harness::TrainConfig t = train_config(cmd.resolve());
  const auto s = harness::train(t, &std::cerr);
  std::cout << "trained " << s.steps << " steps in " << s.seconds << " s; final loss " << s.last.total
            << "; checkpoint " << t.out_dir.string() << "\n";
  return 0;
}

int run_eval(Command& cmd) {
  const KeyValueConfig c = cmd.resolve();
  const fs::path ckpt = require(c, "checkpoint");
  const Recognizer model = Recognizer::load(ckpt);
  if (c.has("decoder") && parse_decoder(c.get_string("decoder", "")) != model.config().decoder)
    throw Error("checkpoint holds a " + to_string(model.config().decoder) + " model, not " +
                c.get_string("decoder", ""));
  const auto meta = checkpoint::load(ckpt).meta;
  harness::InputOptions base;
  if (meta.contains("train")) {
    base.mode = harness::parse_preprocess(meta["train"].value("preprocess", "pad"));
    base.resize_width = meta["train"].value("resize_width", base.resize_width);
    base.max_batch_width = meta["train"].value("max_batch_width", base.max_batch_width);
  }
  const corpus::Corpus data = corpus::load_corpus(require(c, "corpus"));
  if (meta.contains("alphabet")) {
    const auto& bits = meta["alphabet"];
    bool same = static_cast<int>(bits.size()) == data.alphabet.size();
    for (int s = 0; same && s < data.alphabet.size(); ++s) {
      std::string b;
      for (auto v : data.alphabet.glyph(s)) b += v ? '1' : '0';
      same = bits[static_cast<std::size_t>(s)].get<std::string>() == b;
    }
    if (!same) throw Error("corpus glyph alphabet differs from the one the checkpoint was trained on");
  }
  harness::EvalOptions eo;
  eo.sharpen = sharpen_config(c);
  eo.input = input_options(c, base);
  eo.batch_size = c.get_int("batch_size", eo.batch_size);
  eo.threads = c.get_int("threads", eo.threads);
  eo.solo = c.get_bool("solo", false);
  std::vector<Prediction> preds;
  const int seen_max = c.get_int("seen_max", 8);
  const auto report = harness::evaluate_by_length(model, data, seen_max, eo, c.get_string("name", "model"), &preds);
  if (c.has("out")) report.write_csv(c.get_string("out", ""));
  if (c.has("predictions")) harness::write_predictions_csv(c.get_string("predictions", ""), data, preds);
  if (c.has("dump_attn")) harness::write_attention_dump(c.get_string("dump_attn", ""), data, preds);
  std::cout << "seen " << report.seen().accuracy() << " (" << report.seen().count << ")  unseen "
            << report.unseen().accuracy() << " (" << report.unseen().count << ")  total "
            << report.total().accuracy() << " (" << report.total().count << ")\n";
  return 0;
}

int run_extrapolate(Command& cmd) {
  const KeyValueConfig c = cmd.resolve();
  harness::ExtrapolationConfig x;
  x.train = train_config(c);
  x.eval_corpus = require(c, "eval_corpus");
  x.seen_max = c.get_int("seen_max", x.seen_max);
  if (c.has("grid")) x.grid = split_list(c.get_string("grid", ""));
  x.reuse = c.get_bool("reuse", x.reuse);
  x.eval.sharpen = sharpen_config(c);
  x.eval.threads = x.train.threads;
  x.eval.batch_size = c.get_int("eval_batch_size", x.eval.batch_size);
  const auto reports = harness::extrapolation_run(x, &std::cerr);
  std::cout << "wrote " << reports.size() << " reports, comparison.csv and comparison.svg to "
            << x.train.out_dir.string() << "\n";
  return 0;
}

int run_compare(Command& cmd, const std::vector<std::string>& positional) {
  const KeyValueConfig c = cmd.resolve();
  std::vector<std::string> files = split_list(c.get_string("reports", ""));
  files.insert(files.end(), positional.begin(), positional.end());
  if (files.empty()) throw Error("compare needs at least one report");
  std::vector<harness::LengthReport> reports;
  for (const auto& f : files) {
    // name=path assigns a column name; otherwise the file stem is used.
    const auto eq = f.find('=');
    if (eq != std::string::npos) reports.push_back(harness::LengthReport::read_csv(f.substr(eq + 1), f.substr(0, eq)));
    else reports.push_back(harness::LengthReport::read_csv(f));
  }
  const fs::path out = require(c, "out");
  harness::write_comparison_csv(out, reports);
  const fs::path plot = c.get_string("plot", fs::path(out).replace_extension(".svg").string());
  harness::plot_comparison(out, plot);
  std::cout << "wrote " << out.string() << " and " << plot.string() << "\n";
  return 0;
}

int run_plot(Command& cmd) {
  const KeyValueConfig c = cmd.resolve();
  const fs::path csv = require(c, "csv");
  const fs::path out = c.get_string("out", fs::path(csv).replace_extension(".svg").string());
  harness::plot_comparison(csv, out, c.get_string("title", "word accuracy by label length"));
  std::cout << "wrote " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neighbor-decoding text recognizer on synthetic glyph strings"};
  app.require_subcommand(1);

  Command datagen(app, "datagen", "render a synthetic corpus");
  datagen.keys({{"n", "number of samples"},
                {"dist", "length distribution: uniform or longtail"},
                {"min_len", "shortest label"},
                {"max_len", "longest label"},
                {"decay", "longtail ratio r in P(len) ~ r^len"},
                {"alphabet_size", "number of symbols"},
                {"alphabet_seed", "glyph bitmap seed (share it between train and eval corpora)"},
                {"seed", "sample seed"},
                {"noise", "additive noise amplitude"},
                {"jitter", "maximum vertical jitter in pixels"},
                {"spacing", "maximum extra spacing between glyphs"},
                {"out", "output directory"}});

  Command train(app, "train", "train a recognizer");
  train.keys(concat({kModelKeys, kTrainKeys}));

  Command eval(app, "eval", "length-binned evaluation of a checkpoint");
  eval.keys(concat({kSharpenKeys,
                    {{"checkpoint", "checkpoint directory"},
                     {"corpus", "evaluation corpus directory"},
                     {"decoder", "expected decoder kind (checked against the checkpoint)"},
                     {"seen_max", "longest training length"},
                     {"batch_size", "samples per padded batch"},
                     {"threads", "worker threads"},
                     {"solo", "evaluate every sample unpadded (true/false)"},
                     {"preprocess", "pad or resize (defaults to the training setting)"},
                     {"resize_width", "fixed width for preprocess=resize"},
                     {"max_batch_width", "resample wider images down to this width"},
                     {"name", "report name"},
                     {"out", "report CSV"},
                     {"predictions", "per-sample predictions CSV"},
                     {"dump_attn", "directory for per-sample attention text files"}}}));

  Command extrapolate(app, "extrapolate", "train and evaluate the length-extrapolation grid");
  extrapolate.keys(concat({kModelKeys, kTrainKeys, kSharpenKeys,
                           {{"eval_corpus", "evaluation corpus directory"},
                            {"seen_max", "longest training length; longer training samples are dropped"},
                            {"grid", "comma list of nd, nd_as, nd_fem, nd_fem_as, ctc, pat"},
                            {"reuse", "reuse matching checkpoints (true/false)"},
                            {"eval_batch_size", "samples per padded evaluation batch"}}}));

  Command compare(app, "compare", "merge length reports into one CSV and plot");
  compare.keys({{"reports", "comma list of report CSVs (name=path to rename a column)"},
                {"out", "comparison CSV"},
                {"plot", "plot file (SVG)"}});
  std::vector<std::string> compare_files;
  compare.app()->add_option("files", compare_files, "report CSVs");

  Command plot(app, "plot", "plot a comparison CSV");
  plot.keys({{"csv", "comparison CSV"}, {"out", "plot file (SVG)"}, {"title", "plot title"}});

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*datagen.app()) return run_datagen(datagen);
    if (*train.app()) return run_train(train);
    if (*eval.app()) return run_eval(eval);
    if (*extrapolate.app()) return run_extrapolate(extrapolate);
    if (*compare.app()) return run_compare(compare, compare_files);
    if (*plot.app()) return run_plot(plot);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
