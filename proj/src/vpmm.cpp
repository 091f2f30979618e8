#include "logo/vpmm.hpp"

#include "logo/common.hpp"

namespace logo::vpmm {

VpmmNet::VpmmNet(VpmmConfig cfg, nn::ParamStore& store, std::string prefix)
    : cfg_(cfg), store_(&store), prefix_(std::move(prefix)) {}

void VpmmNet::init(Rng& rng) {
  auto lin = [&](const std::string& name, int in_f, int out_f) {
    store_->declare(prefix_ + name + ".w", nn::he_normal(rng, {in_f, out_f}, in_f));
    store_->declare(prefix_ + name + ".b", nn::Tensor({out_f}));
  };
  lin("pos0", 2, cfg_.d);
  lin("pos1", cfg_.d, cfg_.d);
  lin("fuse0", cfg_.c * cfg_.d, 4 * cfg_.d);
  lin("fuse1", 4 * cfg_.d, 2 * cfg_.d);
}

nn::Val VpmmNet::fuse_graph(nn::Tape& tape, nn::GraphParams& P, nn::Val p_norm,
                            nn::Val f_vis) const {
  const auto& ps = tape.val(p_norm).shape();
  const auto& vs = tape.val(f_vis).shape();
  require(ps.size() == 3 && ps[1] == cfg_.c && ps[2] == 2, "fuse: p_norm must be [n,c,2]");
  require(vs.size() == 3 && vs[1] == cfg_.c && vs[2] == cfg_.d, "fuse: f_vis must be [n,c,d]");
  require(ps[0] == vs[0], "fuse: leading dimensions must match");
  const int n = ps[0];

  nn::Val vis_rows = tape.reshape(f_vis, {n * cfg_.c, cfg_.d});
  nn::Val added = vis_rows;
  if (cfg_.use_position) {
    nn::Val rows = tape.reshape(p_norm, {n * cfg_.c, 2});
    nn::Val pos = tape.relu(tape.linear(rows, P(prefix_ + "pos0.w"), P(prefix_ + "pos0.b")));
    pos = tape.relu(tape.linear(pos, P(prefix_ + "pos1.w"), P(prefix_ + "pos1.b")));
    added = tape.add(pos, vis_rows);
  }
  nn::Val flat = tape.reshape(added, {n, cfg_.c * cfg_.d});
  nn::Val h = tape.relu(tape.linear(flat, P(prefix_ + "fuse0.w"), P(prefix_ + "fuse0.b")));
  return tape.relu(tape.linear(h, P(prefix_ + "fuse1.w"), P(prefix_ + "fuse1.b")));
}

nn::Tensor VpmmNet::fuse(const nn::Tensor& p_norm, const nn::Tensor& f_vis) const {
  nn::Tape tape;
  nn::GraphParams P(tape, *store_, false);
  nn::Val out = fuse_graph(tape, P, tape.constant(p_norm), tape.constant(f_vis));
  return tape.val(out);
}

}  // namespace logo::vpmm
