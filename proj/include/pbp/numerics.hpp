#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "pbp/rng.hpp"

namespace pbp {

// Dense row-major double tensor with an optional gradient accumulator.
// Copying a Tensor copies a handle; the buffer is shared. Values are
// treated as immutable once the tensor has entered an op; mutable access
// exists for parameter setup and optimizer updates.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<std::size_t> shape, double value, bool requires_grad = false);
    static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return impl_->shape; }
    std::size_t ndim() const { return impl_->shape.size(); }
    std::size_t dim(std::size_t i) const { return impl_->shape[i]; }
    std::size_t size() const { return impl_->value.size(); }

    std::vector<double>& values() { return impl_->value; }
    const std::vector<double>& values() const { return impl_->value; }
    double scalar_value() const;

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

    bool has_grad() const { return !impl_->grad.empty(); }
    // Zero-filled on first access.
    std::vector<double>& grad();
    const std::vector<double>& grad() const;
    void zero_grad() { impl_->grad.clear(); }

    // Identity of the underlying buffer, for aliasing checks in tests.
    const void* buffer_id() const { return impl_.get(); }

private:
    struct Impl {
        std::vector<std::size_t> shape;
        std::vector<double> value;
        std::vector<double> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Impl> impl_;
    friend class Tape;
    friend Tensor make_like(const std::vector<std::size_t>&, bool);
};

// Reverse-mode tape: ops append their backward step in execution order,
// backward() replays them once in reverse. Gradients accumulate
// additively at fan-out.
class Tape {
public:
    void record(std::function<void()> backward_step) { steps_.push_back(std::move(backward_step)); }
    std::size_t size() const { return steps_.size(); }
    void clear() { steps_.clear(); }

    // Seeds d(loss)/d(loss) = 1 and runs all recorded steps in reverse.
    // The loss must be scalar.
    void backward(const Tensor& loss);

private:
    std::vector<std::function<void()>> steps_;
};

// All ops take the tape last; pass nullptr for pure evaluation (no graph
// is recorded and outputs never require grad).

// a: [..., m, k] (leading dims flattened into rows), b: [k, n].
Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape);

// a: [..., m, k], b: [..., k, n] with identical leading dims; the last two
// axes are multiplied per batch. trans_b multiplies by b's transpose.
Tensor batched_matmul(const Tensor& a, const Tensor& b, bool trans_b, Tape* tape);

// Same shapes, or b a vector broadcast over the last axis.
Tensor add(const Tensor& a, const Tensor& b, Tape* tape);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape);  // elementwise, same shape
Tensor scale(const Tensor& a, double c, Tape* tape);

Tensor softmax_lastdim(const Tensor& x, Tape* tape);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps, Tape* tape);
constexpr double kLayerNormEps = 1e-12;
Tensor gelu(const Tensor& x, Tape* tape);  // tanh approximation

// table: [V, d]; out: out_prefix + [d] with product(out_prefix) == ids.size().
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids,
                        std::vector<std::size_t> out_prefix, Tape* tape);

// Zeroes activations with probability rate and rescales survivors by
// 1/(1-rate) in training; identity in evaluation.
Tensor dropout(const Tensor& x, double rate, bool train, CounterRng& rng, Tape* tape);

// [B, T, H*hd] -> [B, H, T, hd] and back.
Tensor split_heads(const Tensor& x, std::size_t heads, Tape* tape);
Tensor merge_heads(const Tensor& x, Tape* tape);

// scores: [B, H, Tq, Tk]; key_valid: B*Tk flags. Invalid keys receive a
// -1e30 additive penalty, which underflows to exactly zero attention.
Tensor attention_mask(const Tensor& scores, const std::vector<std::uint8_t>& key_valid,
                      Tape* tape);

// x viewed as [N, d] rows; picks rows in order.
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows, Tape* tape);

// Target entries equal to this marker are excluded from losses.
constexpr int kIgnoreTarget = -1;

// logits viewed as [N, C]; targets size N with kIgnoreTarget entries
// excluded. Mean negative log-softmax over the scored rows.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, Tape* tape);

Tensor sum(const Tensor& x, Tape* tape);

}  // namespace pbp
