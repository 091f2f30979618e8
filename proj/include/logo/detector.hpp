#pragma once

// Minimal anchor-free rotated text detector: a small strided conv trunk with
// per-cell score / box-offset / angle-distribution heads, trained with the
// varifocal + probabilistic-IoU + distribution-focal loss combination.

#include <string>
#include <vector>

#include "logo/nn.hpp"
#include "logo/raster.hpp"
#include "logo/types.hpp"

namespace logo::det {

struct DetectorConfig {
  int in_h = 96, in_w = 160;
  int stride = 8;
  int ch1 = 8, ch2 = 16, ch3 = 32, trunk_ch = 32;
  int n_bins = 90;  // angle bins over [-pi/2, pi/2)
  double alpha = 1.0, beta = 2.5, gamma = 0.05;
  double alpha_f = 0.75, gamma_f = 2.0;
  double lr = 3e-3;
  int steps = 600;
  int batch = 2;
  uint64_t seed = 7;
  double score_thresh = 0.3;
  double nms_iou = 0.35;

  int grid_h() const { return in_h / stride; }
  int grid_w() const { return in_w / stride; }
};

// ---- scalar loss formulas (shared by tests and the training graph) ----

inline constexpr double kLogEps = 1e-7;

// Varifocal loss; p is clamped into [kLogEps, 1-kLogEps].
double loss_vfl(double p, double q, double alpha_f, double gamma_f);
double loss_vfl_grad_p(double p, double q, double alpha_f, double gamma_f);

double angle_bin_center(int i, int n_bins);

struct AngleTarget {
  int left = 0;       // index of the lower neighboring bin
  double wl = 1.0;    // bin-width-normalized weights
  double wr = 0.0;
};
// Wraps y by pi into [-pi/2, pi/2) and locates the neighbor bins.
AngleTarget dfl_target(double y, int n_bins);

// Distribution focal loss on an explicit per-bin distribution S.
double loss_dfl(const std::vector<double>& S, double y, int n_bins);
std::vector<double> loss_dfl_grad(const std::vector<double>& S, double y, int n_bins);

// ---- grid encode / decode ----

struct DetectorOutput {
  nn::Tensor p;    // [1,Hc,Wc] score probabilities
  nn::Tensor box;  // [4,Hc,Wc] raw offsets (dx, dy, log w/stride, log h/stride)
  nn::Tensor ang;  // [n_bins,Hc,Wc] logits
};

geom::OrientedBox decode_cell(const DetectorOutput& out, const DetectorConfig& cfg, int i, int j);
std::vector<Detection> decode(const DetectorOutput& out, const DetectorConfig& cfg,
                              double score_thresh, double nms_iou);
// Noiseless target encoding; the two-bin soft angle assignment makes the
// distribution expectation reproduce the target angle.
DetectorOutput encode_targets(const FrameAnnotation& ann, const DetectorConfig& cfg);

// Greedy rotated NMS keeping the highest score per overlap cluster; input
// must be sorted by descending score.
std::vector<Detection> nms_rotated(std::vector<Detection> dets, double iou_thresh);

// Full detection loss recomputed in plain math (no autodiff); errors on an
// empty batch. Used by tests against the graph value.
double loss_det(const std::vector<const DetectorOutput*>& preds,
                const std::vector<const FrameAnnotation*>& anns, const DetectorConfig& cfg);

class DetectorNet {
 public:
  explicit DetectorNet(const DetectorConfig& cfg);

  struct Heads {
    nn::Val p_logit, box, ang;
    int hc = 0, wc = 0;
  };
  Heads forward(nn::Tape& tape, nn::GraphParams& P, nn::Val x, bool training);

  // One Adam step over a frame batch; returns the loss value. A positive
  // lr overrides the configured rate (used by the decay schedule).
  double train_step(const std::vector<const img::Image*>& frames,
                    const std::vector<const FrameAnnotation*>& anns, double lr = -1.0);

  DetectorOutput forward_raw(const img::Image& frame) const;
  std::vector<Detection> detect(const img::Image& frame) const;
  std::vector<Detection> detect(const img::Image& frame, double score_thresh,
                                double nms_iou) const;

  nn::ParamStore& params() { return params_; }
  const DetectorConfig& config() const { return cfg_; }

  void save(const std::string& path, const std::string& config_hash) const;
  static DetectorNet load(const std::string& path);

 private:
  DetectorConfig cfg_;
  nn::ParamStore params_;
  void init_params();
};

// Trains on every sequence under data_dir; deterministic under cfg.seed.
DetectorNet train_detector(const DetectorConfig& cfg, const std::string& data_dir,
                           std::vector<double>* loss_curve = nullptr);

nn::Tensor frame_to_tensor(const img::Image& frame);  // [1,1,H,W], scaled to [-0.5, 0.5]

}  // namespace logo::det
