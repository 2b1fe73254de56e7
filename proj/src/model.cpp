// SPDX-License-Identifier: Apache-2.0
#include "lister/model.hpp"

#include <cmath>
#include <random>

#include "lister/checkpoint.hpp"

namespace lister {

std::string to_string(DecoderKind kind) {
  switch (kind) {
    case DecoderKind::kNeighbor: return "nd";
    case DecoderKind::kCTC: return "ctc";
    case DecoderKind::kPAT: return "pat";
  }
  return "?";
}

DecoderKind parse_decoder(const std::string& text) {
  if (text == "nd") return DecoderKind::kNeighbor;
  if (text == "ctc") return DecoderKind::kCTC;
  if (text == "pat") return DecoderKind::kPAT;
  throw Error("unknown decoder '" + text + "' (expected nd, ctc or pat)");
}

void ModelConfig::validate() const {
  if (num_symbols < 1) throw Error("num_symbols must be positive");
  if (encoder.channels < 1 || encoder.stem_channels < 1 || encoder.mid_channels < 1)
    throw Error("encoder channel counts must be positive");
  if (encoder.context_layers < 0) throw Error("encoder.context_layers must be >= 0");
  if (decoder == DecoderKind::kNeighbor) fem.validate(encoder.channels);
  if (pat_max_len < 1) throw Error("pat.max_len must be positive");
  if (!(decoder_init_std > 0)) throw Error("decoder.init_std must be positive");
  if (loss.lambda_eos < 0 || loss.lambda_ent < 0) throw Error("loss weights must be non-negative");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"decoder", to_string(decoder)},
          {"num_symbols", num_symbols},
          {"encoder",
           {{"channels", encoder.channels},
            {"stem_channels", encoder.stem_channels},
            {"mid_channels", encoder.mid_channels},
            {"context_layers", encoder.context_layers}}},
          {"fem",
           {{"iters", fem.iterations},
            {"trans_layers", fem.trans_layers},
            {"conv_blocks", fem.conv_blocks},
            {"window", fem.window},
            {"heads", fem.heads},
            {"ffn_multiplier", fem.ffn_multiplier}}},
          {"pat_max_len", pat_max_len},
          {"decoder_init_std", decoder_init_std},
          {"loss", {{"lambda_eos", loss.lambda_eos}, {"lambda_ent", loss.lambda_ent}}}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.decoder = parse_decoder(j.at("decoder").get<std::string>());
    c.num_symbols = j.at("num_symbols").get<int>();
    const auto& e = j.at("encoder");
    c.encoder.channels = e.at("channels").get<int>();
    c.encoder.stem_channels = e.at("stem_channels").get<int>();
    c.encoder.mid_channels = e.at("mid_channels").get<int>();
    c.encoder.context_layers = e.at("context_layers").get<int>();
    const auto& f = j.at("fem");
    c.fem.iterations = f.at("iters").get<int>();
    c.fem.trans_layers = f.at("trans_layers").get<int>();
    c.fem.conv_blocks = f.at("conv_blocks").get<int>();
    c.fem.window = f.at("window").get<int>();
    c.fem.heads = f.at("heads").get<int>();
    c.fem.ffn_multiplier = f.at("ffn_multiplier").get<int>();
    c.pat_max_len = j.at("pat_max_len").get<int>();
    c.decoder_init_std = j.value("decoder_init_std", c.decoder_init_std);
    c.loss.lambda_eos = j.at("loss").at("lambda_eos").get<Real>();
    c.loss.lambda_ent = j.at("loss").at("lambda_ent").get<Real>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("bad model config in checkpoint: ") + e.what());
  }
  c.validate();
  return c;
}

Recognizer::Recognizer(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const int c = config_.encoder.channels;
  const int classes = config_.num_symbols + 1;
  encoder = encoder::init_encoder(config_.encoder, rng);
  switch (config_.decoder) {
    case DecoderKind::kNeighbor:
      decoder = nd::init_decoder(c, classes, rng, config_.decoder_init_std);
      fem = fem::init_fem(config_.fem, c, rng);
      break;
    case DecoderKind::kCTC: ctc = baselines::init_ctc(c, config_.num_symbols, rng); break;
    case DecoderKind::kPAT: pat = baselines::init_pat(c, classes, config_.pat_max_len, rng); break;
  }
}

std::vector<ad::Parameter*> Recognizer::parameters() {
  std::vector<ad::Parameter*> out = encoder.parameters();
  auto append = [&out](std::vector<ad::Parameter*> more) { out.insert(out.end(), more.begin(), more.end()); };
  switch (config_.decoder) {
    case DecoderKind::kNeighbor:
      append(decoder.parameters());
      if (config_.fem.iterations > 1) append(fem.parameters());
      break;
    case DecoderKind::kCTC: append(ctc.parameters()); break;
    case DecoderKind::kPAT: append(pat.parameters()); break;
  }
  return out;
}

std::vector<const ad::Parameter*> Recognizer::parameters() const {
  auto mut = const_cast<Recognizer*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

Recognizer::TrainOutput Recognizer::forward_train(ad::Tape& tape, const Matrix& image, int valid_width,
                                                  const std::vector<int>& label) const {
  if (label.empty()) throw Error("training label is empty");
  for (int s : label)
    if (s < 0 || s >= config_.num_symbols) throw Error("label symbol " + std::to_string(s) + " out of range");
  const encoder::FeatureMap f = encoder::encode(tape, encoder, image, valid_width);
  TrainOutput out;
  switch (config_.decoder) {
    case DecoderKind::kNeighbor: {
      const auto mode = nd::DecodeMode::training(static_cast<int>(label.size()));
      const auto passes = fem::run_iterations(tape, f, decoder, fem, nd::SharpenConfig{.enabled = false}, mode);
      const auto target = objectives::decoder_targets(label, decoder.num_classes - 1);
      std::vector<objectives::IterationLoss> losses;
      for (const auto& r : passes) losses.push_back(objectives::iteration_loss(r, target, config_.loss));
      objectives::LossBreakdown b;
      out.loss = objectives::total_loss(losses, &b);
      out.terms = b.mean;
      break;
    }
    case DecoderKind::kCTC: {
      out.loss = baselines::ctc_loss(baselines::ctc_column_logits(tape, f, ctc), label, ctc.blank());
      out.feasible = std::isfinite(out.loss.scalar());
      out.terms.rec = out.terms.total = out.feasible ? out.loss.scalar() : 0.0;
      break;
    }
    case DecoderKind::kPAT: {
      const auto seq = nd::build_sequence(tape, f, pat.eos);
      const auto r = baselines::pat_decode(tape, seq, pat);
      out.loss = ad::cross_entropy_rows(r.logits, baselines::pat_targets(label, pat));
      out.terms.rec = out.terms.total = out.loss.scalar();
      break;
    }
  }
  return out;
}

Prediction Recognizer::predict(const Matrix& image, int valid_width, const nd::SharpenConfig& sharpen) const {
  ad::Tape tape(false);
  const encoder::FeatureMap f = encoder::encode(tape, encoder, image, valid_width);
  Prediction p;
  switch (config_.decoder) {
    case DecoderKind::kNeighbor: {
      const auto passes = fem::run_iterations(tape, f, decoder, fem, sharpen, nd::DecodeMode::inference());
      const auto& last = passes.back();
      p.symbols = last.prediction;
      p.terminated = last.terminated;
      p.attention = last.rollout.value();
      break;
    }
    case DecoderKind::kCTC:
      p.symbols = baselines::ctc_greedy_decode(baselines::ctc_column_logits(tape, f, ctc).value(), ctc.blank());
      break;
    case DecoderKind::kPAT: {
      const auto seq = nd::build_sequence(tape, f, pat.eos);
      const auto r = baselines::pat_decode(tape, seq, pat);
      p.symbols = r.prediction;
      p.attention = r.attention.value();
      break;
    }
  }
  return p;
}

void Recognizer::save(const std::filesystem::path& dir, nlohmann::json extra) const {
  extra["model"] = config_.to_json();
  checkpoint::save(dir, parameters(), std::move(extra));
}

Recognizer Recognizer::load(const std::filesystem::path& dir) {
  const checkpoint::Loaded loaded = checkpoint::load(dir);
  if (!loaded.meta.contains("model")) throw Error("checkpoint meta.json has no model section");
  Recognizer r(ModelConfig::from_json(loaded.meta["model"]), 0);
  checkpoint::assign(loaded, r.parameters());
  return r;
}

}  // namespace lister
