#pragma once

// Visual position mixture module: projects normalized centerline coordinates
// to the visual feature width, adds them per position, and flattens through a
// two-layer head into one embedding per instance.

#include <string>

#include "logo/nn.hpp"

namespace logo::vpmm {

struct VpmmConfig {
  int c = 26;  // centerline points per instance
  int d = 32;  // visual feature width; embeddings are 2d wide
  bool use_position = true;  // false: visual-features-only ablation
  int emb_dim() const { return 2 * d; }
};

// Parameters live in an external store under `prefix` so the tracker can
// serialize everything in one checkpoint.
class VpmmNet {
 public:
  VpmmNet(VpmmConfig cfg, nn::ParamStore& store, std::string prefix = "vpmm.");
  void init(Rng& rng);  // declares parameters (no-op when already present)

  // p_norm [n,c,2] (entries in [0,1]), f_vis [n,c,d] -> [n,2d]
  nn::Val fuse_graph(nn::Tape& tape, nn::GraphParams& P, nn::Val p_norm, nn::Val f_vis) const;
  nn::Tensor fuse(const nn::Tensor& p_norm, const nn::Tensor& f_vis) const;

  const VpmmConfig& config() const { return cfg_; }

 private:
  VpmmConfig cfg_;
  nn::ParamStore* store_;
  std::string prefix_;
};

}  // namespace logo::vpmm
