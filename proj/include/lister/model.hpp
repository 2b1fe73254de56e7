// SPDX-License-Identifier: Apache-2.0
//
// A full recognizer: shared encoder plus one of the neighbor decoder (with
// optional feature enhancement), the CTC head or the PAT head.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "lister/baselines.hpp"
#include "lister/encoder.hpp"
#include "lister/fem.hpp"
#include "lister/neighbor_decoder.hpp"
#include "lister/objectives.hpp"

namespace lister {

enum class DecoderKind { kNeighbor, kCTC, kPAT };

std::string to_string(DecoderKind kind);
/// Accepts "nd", "ctc" or "pat".
DecoderKind parse_decoder(const std::string& text);

struct ModelConfig {
  DecoderKind decoder = DecoderKind::kNeighbor;
  int num_symbols = 10;
  encoder::EncoderConfig encoder;
  fem::FEMConfig fem;  // used by the nd decoder only; iterations = 1 disables enhancement
  int pat_max_len = 12;
  Real decoder_init_std = 0.05;  // Wq, Wk, Wr
  objectives::LossWeights loss;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct Prediction {
  std::vector<int> symbols;
  bool terminated = true;
  Matrix attention;  // final-iteration rollout (ND) or query attention (PAT); empty for CTC
};

class Recognizer {
 public:
  Recognizer(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  /// Trainable parameters of the selected decoder family, in a stable order.
  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;

  struct TrainOutput {
    ad::Var loss;
    objectives::LossTerms terms;
    bool feasible = true;  // false when a CTC target cannot be aligned; skip the sample
  };

  /// Builds the training graph for one sample on `tape`.
  TrainOutput forward_train(ad::Tape& tape, const Matrix& image, int valid_width, const std::vector<int>& label) const;

  /// Inference on one (possibly right-padded) image.
  Prediction predict(const Matrix& image, int valid_width, const nd::SharpenConfig& sharpen) const;

  void save(const std::filesystem::path& dir, nlohmann::json extra = nlohmann::json::object()) const;
  static Recognizer load(const std::filesystem::path& dir);

  encoder::EncoderParams encoder;
  nd::DecoderParams decoder;
  fem::FEMParams fem;
  baselines::CTCHead ctc;
  baselines::PATHead pat;

 private:
  ModelConfig config_;
};

}  // namespace lister
