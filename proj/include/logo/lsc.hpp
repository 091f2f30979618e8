#pragma once

// Language synergy classifier: a compact recognizer whose visual stream is
// iteratively refined by a small bidirectional language mixer and merged by a
// gated fusion head, plus an auxiliary glyph segmentation branch supervised
// by k-means pseudo-masks. Emits per-instance language scores used to
// re-score detections before tracking.

#include <string>
#include <vector>

#include "logo/mining.hpp"
#include "logo/nn.hpp"
#include "logo/raster.hpp"
#include "logo/types.hpp"

namespace logo::lsc {

enum class SegLossKind { kMse, kBce };

struct LscConfig {
  int patch_w = 128, patch_h = 32;
  int c = 26;   // positions == len_max
  int d = 32;   // per-position feature width (F_vis)
  int e0 = 6, e1 = 12, e2 = 24, e3 = 40;  // encoder channels
  int M = 3;    // language refinement iterations
  double lambda_v = 1.0, lambda_l = 1.0;
  SegLossKind seg_loss = SegLossKind::kMse;
  bool use_glyph = true;
  double lr = 1e-3;
  int steps = 500;
  int batch = 8;
  uint64_t seed = 11;

  int n_classes() const { return mine::CodeDictionary::kNumClasses; }
};

struct RecognitionOutput {
  nn::Tensor logits_v;               // [c, n_classes]
  std::vector<nn::Tensor> logits_l;  // M x [c, n_classes]
  std::vector<nn::Tensor> logits_f;  // M x [c, n_classes]
  mine::CharSequence decoded;        // canonical: first EOS/PAD truncates
  nn::Tensor f_vis;                  // [c, d]
};

struct GlyphFeatures {
  nn::Tensor f0, f1, f2;  // [1,e0,H,W], [1,e1,H/2,W/2], [1,e2,H/4,W/4]
};

int language_score(const mine::CharSequence& codes);

// In-place fusion re-scoring. With weight w: w*lang + (1-w)*det; the default
// 0.5 evaluates (det+lang)/2 exactly.
std::vector<Detection> rescore(const std::vector<Detection>& dets,
                               const std::vector<int>& language_scores, double weight = 0.5);

// 2-means over pixel intensities, capped at 50 iterations, seeded from the
// patch bytes. The cluster with fewer border-row/column members is labeled
// foreground; constant patches give an all-zero mask.
nn::Tensor kmeans_pseudolabel(const img::Image& patch);

double loss_seg(const nn::Tensor& sm, const nn::Tensor& spl);  // mean squared error
double loss_rec(const RecognitionOutput& out, const mine::CharSequence& target, double lambda_v,
                double lambda_l);

class LscNet {
 public:
  explicit LscNet(const LscConfig& cfg);

  RecognitionOutput recognize(const img::Image& patch, GlyphFeatures* glyph = nullptr) const;
  // Eq-style glyph decoder on extracted backbone features (inference mode).
  nn::Tensor glyph_forward(const GlyphFeatures& feats) const;  // [patch_h, patch_w] in [0,1]

  struct Batch {
    std::vector<const img::Image*> patches;
    std::vector<const mine::CharSequence*> targets;
    std::vector<char> positive;
    std::vector<const nn::Tensor*> masks;  // pseudo-labels for positives, may be null
  };
  // One Adam step; returns total loss. The glyph term is evaluated on
  // positive samples only. A positive lr overrides the configured rate.
  double train_step(const Batch& batch, double lr = -1.0);

  nn::ParamStore& params() { return params_; }
  const LscConfig& config() const { return cfg_; }

  void save(const std::string& path, const std::string& config_hash) const;
  static LscNet load(const std::string& path);

  struct GraphOut {
    nn::Val logits_v;                 // [N*c, K]
    std::vector<nn::Val> logits_l, logits_f;
    nn::Val f_vis_rows;               // [N*c, d]
    nn::Val len_logits;               // [N, c-1] word-length head
    nn::Val f0, f1, f2;               // encoder features
  };
  GraphOut forward(nn::Tape& tape, nn::GraphParams& P, nn::Val x, bool training) const;
  nn::Val glyph_graph(nn::Tape& tape, nn::GraphParams& P, nn::Val f0, nn::Val f1, nn::Val f2,
                      bool training) const;
  // Band-attention stack: row L-1 holds the [c x w_cols] pooling weights
  // that read sub-band `sub` of each character cell under the length-L
  // hypothesis.
  nn::Tensor band_matrix(int n_len, int w_cols, int sub, int n_sub) const;

 private:
  LscConfig cfg_;
  nn::ParamStore params_;
  void init_params();
};

LscNet train_lsc(const LscConfig& cfg, const std::string& archive_dir,
                 std::vector<double>* loss_curve = nullptr);

// Held-out sequence accuracy on positive samples (decoded word equals the
// target word, case-insensitive by construction).
double sequence_accuracy(const LscNet& net, const std::string& archive_dir,
                         const std::vector<mine::ArchiveSample>& samples);

// ---- pseudo-label robustness harness ----

struct GlyphSample {
  img::Image patch;
  nn::Tensor mask;  // [patch_h, patch_w] binary
};

// Trains encoder + glyph branch alone with the chosen segmentation loss.
LscNet train_glyph_variant(const LscConfig& cfg, const std::vector<GlyphSample>& train,
                           SegLossKind kind, int steps, double lr, uint64_t seed);
// Thresholded mask agreement against clean labels.
double mask_accuracy(const LscNet& net, const std::vector<GlyphSample>& held_out);

nn::Tensor patch_to_tensor(const img::Image& patch);  // [1,1,h,w] scaled to [-0.5,0.5]

}  // namespace logo::lsc
