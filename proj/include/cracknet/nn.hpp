#pragma once
#include <cstdint>
#include <functional>
#include <vector>

#include "cracknet/rng.hpp"
#include "cracknet/tensor.hpp"

namespace cracknet {

// ---------------------------------------------------------------------------
// Network description
// ---------------------------------------------------------------------------

enum class LayerKind { Conv, Dense, Relu, Sigmoid, Dropout, Flatten };

struct LayerSpec {
    LayerKind kind = LayerKind::Relu;
    int maps = 0;      // Conv: output feature maps
    int width = 0;     // Dense: output width
    float rate = 0.f;  // Dropout: drop probability in [0,1)

    // conv geometry is fixed: 3x3 kernel, stride 1, zero padding 1
    static constexpr int kKernel = 3;
    static constexpr int kStride = 1;
    static constexpr int kPad = 1;

    static LayerSpec conv(int maps);
    static LayerSpec dense(int width);
    static LayerSpec relu() { return {LayerKind::Relu}; }
    static LayerSpec sigmoid() { return {LayerKind::Sigmoid}; }
    static LayerSpec dropout(float rate);
    static LayerSpec flatten() { return {LayerKind::Flatten}; }
};

struct NetworkSpec {
    int input_h = 27, input_w = 27, input_c = 3;
    std::vector<LayerSpec> layers;

    // Output shape of every layer, chained from the input. Throws ShapeError
    // if the stack is inconsistent (e.g. conv after flatten).
    std::vector<std::vector<int>> chain_shapes() const;
    void validate() const;
    // Production contract: 27x27x3 input, final sigmoid over exactly 25 units.
    void validate_crack_model() const;
    int output_width() const;

    static NetworkSpec default_crack_model(float dropout_rate = 0.5f);
};

// Per-layer weights/biases. Conv weights are stored [3,3,C,K] row-major,
// which is exactly the (9C)xK matrix the im2col product consumes. Dense
// weights are [in,out].
template <typename T>
struct ParamsT {
    struct Entry {
        TensorT<T> weight, bias;
        bool empty() const { return weight.data.empty() && bias.data.empty(); }
    };
    std::vector<Entry> layers;

    int64_t param_count() const;
    bool all_finite() const;
    void fill_zero();

    template <typename U>
    ParamsT<U> cast() const {
        ParamsT<U> out;
        out.layers.reserve(layers.size());
        for (const auto& e : layers)
            out.layers.push_back({e.weight.template cast<U>(), e.bias.template cast<U>()});
        return out;
    }
};

using NetworkParams = ParamsT<float>;
using NetworkParamsD = ParamsT<double>;

// He-uniform weights (limit sqrt(6/fan_in)), zero biases. Draws are float32
// regardless of T so float and double instantiations share the same stream.
template <typename T>
ParamsT<T> he_uniform_init(const NetworkSpec& spec, uint64_t seed);

// ---------------------------------------------------------------------------
// Layer operations
// ---------------------------------------------------------------------------

enum class Mode { Training, Inference };

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& input /*HxWxC*/, const TensorT<T>& kernels /*Kx3x3xC*/,
                          const TensorT<T>& bias /*K*/, int padding);

template <typename T>
TensorT<T> dense_forward(const TensorT<T>& input, const TensorT<T>& weights /*in x out*/,
                         const TensorT<T>& bias /*out*/);

template <typename T> TensorT<T> relu(const TensorT<T>& x);
template <typename T> TensorT<T> sigmoid(const TensorT<T>& x);

// Inverted dropout: training mode zeroes with probability `rate` and scales
// survivors by 1/(1-rate); inference mode is the identity.
template <typename T>
TensorT<T> dropout(const TensorT<T>& x, float rate, Mode mode, Rng& rng,
                   std::vector<uint8_t>* mask_out = nullptr);

// Cross entropy over the 25 structured outputs; predictions clamped to
// [eps, 1-eps] before the logs.
inline constexpr double kBceEps = 1e-7;
template <typename T> T bce_loss(const std::vector<T>& pred, const std::vector<T>& target);

template <typename T> T l2_penalty(const ParamsT<T>& params);  // 0.5 * sum W^2, weights only
template <typename T> T total_loss(T data_loss, const ParamsT<T>& params, T beta);

// ---------------------------------------------------------------------------
// Whole-network forward/backward
// ---------------------------------------------------------------------------

// Holds per-layer activations and dropout masks of one forward pass, plus
// reusable im2col scratch. Valid only between a forward pass and the matching
// backward pass.
template <typename T>
struct ForwardCacheT {
    bool valid = false;
    Mode mode = Mode::Inference;
    TensorT<T> input;
    std::vector<TensorT<T>> acts;              // output of each layer
    std::vector<std::vector<uint8_t>> masks;   // dropout keep masks
    std::vector<T> col, dcol;                  // im2col scratch
};

using ForwardCache = ForwardCacheT<float>;

template <typename T>
std::vector<T> network_forward(const NetworkSpec& spec, const ParamsT<T>& params,
                               const TensorT<T>& input, Mode mode, ForwardCacheT<T>& cache,
                               Rng* dropout_rng = nullptr);

// Analytic dL_total/dtheta for BCE against `target`, including the beta*W
// weight-decay term. Accumulates into `grads` (+=) so batch workers can reuse
// one accumulator; consumes the cache.
template <typename T>
void network_backward(const NetworkSpec& spec, const ParamsT<T>& params, ForwardCacheT<T>& cache,
                      const std::vector<T>& target, T beta, ParamsT<T>& grads);

template <typename T>
ParamsT<T> network_backward(const NetworkSpec& spec, const ParamsT<T>& params,
                            ForwardCacheT<T>& cache, const std::vector<T>& target, T beta);

template <typename T>
ParamsT<T> zeros_like(const ParamsT<T>& params);

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct TrainConfig {
    float learning_rate = 1e-3f;
    float momentum = 0.9f;
    int batch_size = 256;
    int epochs = 20;
    float l2_beta = 5e-4f;
    float dropout_rate = 0.5f;
    uint64_t rng_seed = 0;

    void validate() const;
};

struct SgdState {
    NetworkParams velocity;  // zero-initialized to parameter shapes on first step
};

// v <- momentum*v - lr*g; theta <- theta + v. Throws NumericError on a
// non-finite gradient.
void sgd_step(NetworkParams& params, const NetworkParams& grads, const TrainConfig& cfg,
              SgdState& state);

// ---------------------------------------------------------------------------
// Finite-difference audit
// ---------------------------------------------------------------------------

struct GradCheckResult {
    double max_rel_error = 0.0;
    int64_t param_count = 0;
};

// Seeded 64-bit audit: analytic gradients of L_total vs central finite
// differences over every parameter. rel err = |a-f| / max(1, |a|+|f|).
// `corrupt` perturbs one analytic gradient entry (negative-control hook).
GradCheckResult gradient_check(const NetworkSpec& spec, uint64_t seed, double epsilon = 1e-3,
                               double beta = 5e-4, double corrupt = 0.0);

// 9x9x3 input, two conv layers + dense(25) + sigmoid; < 1e4 parameters.
NetworkSpec gradcheck_mini_spec();

// ---------------------------------------------------------------------------
// Batched inference adapter
// ---------------------------------------------------------------------------

// Writes n*output_width probabilities for n contiguous input patches. Safe to
// call concurrently (read-only over spec/params).
using BatchPredictor = std::function<void(const float* inputs, int n, float* outputs)>;

BatchPredictor make_predictor(const NetworkSpec& spec, const NetworkParams& params);

}  // namespace cracknet
