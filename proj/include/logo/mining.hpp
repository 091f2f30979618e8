#pragma once

// Offline construction of the recognizer training set: positive/negative
// sample selection against ground truth and target-sequence encoding.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "logo/raster.hpp"
#include "logo/types.hpp"

namespace logo::mine {

// 36-symbol dictionary: EOS=0, '0'-'9' -> 1..10, 'a'-'z' -> 11..36. The pad
// symbol serializes as 100 but occupies the contiguous class index 37 inside
// the classifier; the mapping is applied only at (de)serialization.
struct CodeDictionary {
  int len_max = 26;

  static constexpr int kEos = 0;
  static constexpr int kPadClass = 37;
  static constexpr int kPadSerialized = 100;
  static constexpr int kNumClasses = 38;  // EOS + 36 chars + PAD

  // -1 when the character is not in the dictionary (after lowercase folding).
  static int code_of(char ch);
  static char char_of(int code);  // code in [1,36]
};

// Fixed-length code sequence using internal class indices. Invariants:
// exactly one EOS, no PAD before it, only PAD after it.
struct CharSequence {
  std::vector<int> codes;
};

void validate_sequence(const CharSequence& seq, const CodeDictionary& dict);

CharSequence encode_positive(const std::string& word, const CodeDictionary& dict);
CharSequence encode_negative(const CodeDictionary& dict);

// Word text up to the first EOS.
std::string decode_word(const CharSequence& seq);

// Repairs raw per-position codes (e.g. argmax output or vote results) so the
// invariants hold: the first EOS or PAD terminates the word.
CharSequence canonicalize_codes(const std::vector<int>& raw, int len_max);

// External representation with PAD=100.
std::vector<int> serialize_codes(const CharSequence& seq);
CharSequence parse_serialized_codes(const std::vector<int>& codes, const CodeDictionary& dict);

// Predictions whose best IoU against every ground truth stays below h_I and
// whose detection score exceeds h_S.
std::vector<Detection> select_negatives(const std::vector<Detection>& preds,
                                        const std::vector<geom::RotatedQuad>& gts, double h_I,
                                        double h_S);

struct MiningConfig {
  double h_iou = 0.05;
  double h_score = 0.3;
  int patch_w = 128;
  int patch_h = 32;
  uint64_t seed = 1;
  int neg_cap_per_frame = -1;  // uncapped by default
};

struct ArchiveSample {
  std::string patch_path;
  CharSequence target;
  bool positive = true;
  int frame_id = 0;
  geom::RotatedQuad quad;
};

using DetectFn = std::function<std::vector<Detection>(const img::Image&)>;

// Builds the sample archive for one or more sequence directories: every
// ground-truth quad becomes a positive, detector outputs filtered per the
// selection rule become negatives. Patches are cut from the original frames
// and resized to patch_w x patch_h; the archive order is shuffled by seed.
struct ArchiveStats {
  int positives = 0;
  int negatives = 0;
};
ArchiveStats build_lsc_dataset(const std::vector<std::string>& sequence_dirs,
                               const DetectFn& detect, const CodeDictionary& dict,
                               const MiningConfig& cfg, const std::string& out_dir);

std::vector<ArchiveSample> read_archive(const std::string& dir, const CodeDictionary& dict);
img::Image load_patch(const std::string& archive_dir, const ArchiveSample& sample);

}  // namespace logo::mine
