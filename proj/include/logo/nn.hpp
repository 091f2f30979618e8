#pragma once

// Dense double-precision tensors plus a define-by-run reverse-mode tape.
// Deliberately small: just the operations the detector, recognizer, fusion
// module and tracker need, all single-threaded and deterministic.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "logo/common.hpp"
#include "logo/rng.hpp"

namespace logo::nn {

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<double> data);

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double v);
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(d_.size()); }

  double* data() { return d_.data(); }
  const double* data() const { return d_.data(); }
  double& operator[](int64_t i) { return d_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return d_[static_cast<size_t>(i)]; }
  std::vector<double>& vec() { return d_; }
  const std::vector<double>& vec() const { return d_; }

  // Value of a size-1 tensor.
  double item() const;

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  std::vector<int> shape_;
  std::vector<double> d_;
};

int64_t shape_size(const std::vector<int>& shape);

struct Val {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

// Context handed to custom-op backward closures.
class Tape;
struct CustomCtx {
  Tape* tape = nullptr;
  std::vector<int> inputs;
  int out = -1;
  const Tensor& in_val(int i) const;
  Tensor* in_grad(int i) const;  // nullptr when that input does not need grad
  const Tensor& out_grad() const;
};

class Tape {
 public:
  Val leaf(Tensor v, bool requires_grad = false);
  Val constant(Tensor v) { return leaf(std::move(v), false); }
  Val constant(double v) { return leaf(Tensor::scalar(v), false); }

  const Tensor& val(Val v) const;
  Tensor& grad(Val v);
  bool requires_grad(Val v) const;
  size_t num_nodes() const { return nodes_.size(); }

  // Runs reverse accumulation from a scalar root.
  void backward(Val root);

  // ---- elementwise ----
  Val add(Val a, Val b);
  Val sub(Val a, Val b);
  Val mul(Val a, Val b);
  Val scale(Val a, double c);
  Val add_const(Val a, double c);
  Val relu(Val a);
  Val sigmoid(Val a);
  Val logv(Val a);
  Val expv(Val a);

  // ---- linear algebra ----
  // matmul with optional transposes; a is [m,k] (or [k,m] if ta), b is [k,n]
  // (or [n,k] if tb); result [m,n].
  Val matmul(Val a, Val b, bool ta = false, bool tb = false);
  Val add_rowvec(Val x, Val b);  // [N,F] + [F]
  Val linear(Val x, Val w, Val b) { return add_rowvec(matmul(x, w), b); }

  // ---- convolutional ----
  Val conv2d(Val x, Val w, Val b, int stride, int pad);
  // Training batchnorm over (N,H,W) per channel; batch statistics are written
  // to out_mean/out_var for running-average upkeep.
  Val batchnorm(Val x, Val gamma, Val beta, double eps, Tensor* out_mean = nullptr,
                Tensor* out_var = nullptr);
  Val bn_inference(Val x, Val gamma, Val beta, const Tensor& mean, const Tensor& var, double eps);
  Val upsample2x(Val x);

  // ---- shape & assembly ----
  Val reshape(Val x, std::vector<int> shape);
  Val concat_cols(Val a, Val b);                 // [N,F1],[N,F2] -> [N,F1+F2]
  Val concat_rows(const std::vector<Val>& xs);   // stack along dim 0
  Val slice_batch(Val x, int n);                 // [N,...] -> [...] for sample n
  Val gather_batch(Val x, std::vector<int> idx); // [N,...] -> [M,...]
  Val mean_h_to_seq(Val x);                      // [N,C,H,W] -> [N,W,C], mean over H
  Val stack_h_to_seq(Val x);                     // [N,C,H,W] -> [N,W,C*H]
  // Rows shifted by delta with zero fill; when block > 0 the shift never
  // crosses boundaries between consecutive blocks of `block` rows.
  Val shift_rows(Val x, int delta, int block = 0);

  // ---- reductions & losses ----
  Val row_softmax(Val x);  // [N,K]
  Val mean_all(Val x);
  Val sum_all(Val x);
  Val mse(Val a, Val b) { auto d = sub(a, b); return mean_all(mul(d, d)); }
  // Weighted mean of per-row negative log softmax at target index.
  Val ce_rows(Val logits, const std::vector<int>& target, const std::vector<double>& weight);
  Val append_col(Val x, Val bias_scalar);  // [N,M] -> [N,M+1], last col = scalar
  // Max over column segments: segs are [begin,end) column ranges -> [N,|segs|].
  Val segment_colmax(Val x, const std::vector<std::pair<int, int>>& segs);

  // Escape hatch for fused module-specific ops. The caller computes the
  // forward value; `back` receives the output grad and input val/grad slots.
  using CustomBack = std::function<void(const CustomCtx&)>;
  Val custom(const std::vector<Val>& inputs, Tensor out, CustomBack back);

 private:
  struct Node {
    Tensor val;
    Tensor grad;
    bool req = false;
    std::function<void()> back;  // empty for leaves/constants
  };
  std::vector<Node> nodes_;
  friend struct CustomCtx;

  Val push(Tensor v, bool req, std::function<void()> back);
  Node& node(Val v) { return nodes_[static_cast<size_t>(v.idx)]; }
  const Node& node(Val v) const { return nodes_[static_cast<size_t>(v.idx)]; }
};

// ---- parameters ----

struct ParamState {
  Tensor value;
  Tensor m;  // Adam first moment
  Tensor v;  // Adam second moment
};

class ParamStore {
 public:
  Tensor& declare(const std::string& name, Tensor init);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const { return params_.count(name) > 0; }
  std::vector<std::string> names() const;

  Tensor& buffer(const std::string& name, Tensor init);
  Tensor& buffer(const std::string& name);
  bool has_buffer(const std::string& name) const { return buffers_.count(name) > 0; }
  std::vector<std::string> buffer_names() const;

  void adam_step(const std::map<std::string, Tensor>& grads, double lr, double beta1 = 0.9,
                 double beta2 = 0.999, double eps = 1e-8);
  int64_t step() const { return step_; }
  void set_step(int64_t s) { step_ = s; }

 private:
  std::map<std::string, ParamState> params_;  // ordered for determinism
  std::map<std::string, Tensor> buffers_;
  int64_t step_ = 0;
};

// Binds a ParamStore into one tape for a single training/inference step.
class GraphParams {
 public:
  GraphParams(Tape& tape, ParamStore& store, bool train)
      : tape_(&tape), store_(&store), train_(train) {}
  Val operator()(const std::string& name);
  // Collects grads for every bound parameter and applies one Adam update.
  void apply_adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

 private:
  Tape* tape_;
  ParamStore* store_;
  bool train_;
  std::map<std::string, Val> bound_;
};

// ---- initializers ----

Tensor he_normal(Rng& rng, std::vector<int> shape, int fan_in);
Tensor normal_init(Rng& rng, std::vector<int> shape, double std);

// Cosine decay from base at step 0 to 5 percent of base at step total-1.
double cosine_lr(double base, int step, int total);

// ---- checkpoint io ----

struct CheckpointHeader {
  std::string module;
  std::string config_hash;
  int64_t step = 0;
  std::string extra_json;  // module-specific settings, JSON object text
};

void save_checkpoint(const std::string& path, const ParamStore& store,
                     const CheckpointHeader& header);
CheckpointHeader load_checkpoint(const std::string& path, ParamStore& store);
CheckpointHeader peek_checkpoint(const std::string& path);

}  // namespace logo::nn
