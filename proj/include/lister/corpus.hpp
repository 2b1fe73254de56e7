// SPDX-License-Identifier: Apache-2.0
//
// Synthetic glyph-string corpora with controllable length distributions.
#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "lister/types.hpp"

namespace lister::corpus {

inline constexpr int kImageHeight = 32;
inline constexpr Real kPadValue = 0.0;

/// Fixed random-but-distinct binary glyph bitmaps, one per symbol.
/// Symbol ids are 0..size()-1; the end-of-sequence class id is size().
class GlyphAlphabet {
 public:
  GlyphAlphabet() = default;
  GlyphAlphabet(int glyph_size, std::vector<std::vector<std::uint8_t>> glyphs);

  /// Draws `symbols` pairwise-distinct k x k bitmaps from `master_seed`.
  static GlyphAlphabet generate(int symbols, std::uint64_t master_seed, int glyph_size = 8);

  int size() const { return static_cast<int>(glyphs_.size()); }
  int eos_class() const { return size(); }
  int num_classes() const { return size() + 1; }
  int glyph_size() const { return glyph_size_; }
  bool pixel(int symbol, int row, int col) const {
    return glyphs_[static_cast<std::size_t>(symbol)][static_cast<std::size_t>(row * glyph_size_ + col)] != 0;
  }
  const std::vector<std::uint8_t>& glyph(int symbol) const { return glyphs_.at(static_cast<std::size_t>(symbol)); }

  /// One line per symbol: `<id>\t<k>\t<k*k bits as 0/1>`.
  void save(const std::filesystem::path& file) const;
  static GlyphAlphabet load(const std::filesystem::path& file);

 private:
  int glyph_size_ = 8;
  std::vector<std::vector<std::uint8_t>> glyphs_;
};

struct Sample {
  Matrix image;  // kImageHeight x width, values in [0, 1]
  std::vector<int> label;
  int valid_width = 0;

  int width() const { return static_cast<int>(image.cols()); }
};

struct RenderOptions {
  int vertical_scale = 2;     // glyph rows are repeated this many times
  int max_jitter = 2;         // vertical, +/- pixels
  int max_spacing = 3;        // extra pixels between glyphs, drawn from 0..max_spacing
  int margin = 4;             // background columns on each side
  Real noise_amplitude = 0.1; // uniform additive noise in [-a, a], clamped to [0, 1]
  int width_quantum = 4;      // valid_width is rounded up to a multiple of this
};

/// Renders `label` left to right. Deterministic for fixed (label, alphabet, seed).
/// Throws Error on an empty label or an unknown symbol id.
Sample render_sample(const std::vector<int>& label, const GlyphAlphabet& alphabet, std::uint64_t seed,
                     const RenderOptions& opts = {});

enum class LengthKind { kUniform, kLongTail };

struct LengthDistribution {
  LengthKind kind = LengthKind::kUniform;
  int min_len = 1;
  int max_len = 8;
  Real decay = 0.7;  // long tail: P(len) proportional to decay^len

  void validate() const;
  /// Probability mass of `len` under this distribution.
  Real probability(int len) const;
  static LengthDistribution parse(const std::string& kind, int min_len, int max_len, Real decay = 0.7);
};

int sample_length(const LengthDistribution& dist, std::mt19937_64& rng);

struct ManifestRow {
  int id = 0;
  std::vector<int> label;
  int valid_width = 0;
  std::string filename;
};

/// Writes `n` samples, `manifest.tsv` and `alphabet.tsv` under `out_dir`.
/// Returns the manifest rows written.
std::vector<ManifestRow> build_corpus(int n, const LengthDistribution& dist, const GlyphAlphabet& alphabet,
                                      std::uint64_t seed, const std::filesystem::path& out_dir,
                                      const RenderOptions& opts = {});

/// A corpus loaded into memory.
struct Corpus {
  GlyphAlphabet alphabet;
  std::vector<Sample> samples;
  std::vector<ManifestRow> rows;
};

/// Loads and validates a corpus directory; errors name the offending manifest row.
Corpus load_corpus(const std::filesystem::path& dir);

/// Samples whose label length lies in [min_len, max_len].
Corpus filter_by_length(const Corpus& corpus, int min_len, int max_len);

// Binary greymap (P5) I/O; pixel byte = round(255 * value).
void write_pgm(const std::filesystem::path& file, const Matrix& image);
Matrix read_pgm(const std::filesystem::path& file);

std::string label_to_string(const std::vector<int>& label);
std::vector<int> parse_label(const std::string& text);

}  // namespace lister::corpus
