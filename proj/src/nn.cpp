#include "cracknet/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

#include "cracknet/errors.hpp"

namespace cracknet {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapRM = Eigen::Map<const RowMat<T>>;
template <typename T>
using MapVec = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using CMapVec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

// input HxWxC row-major, zero pad 1, 3x3 window -> col (H*W) x (9C)
template <typename T>
void im2col_3x3(const T* in, int H, int W, int C, T* col) {
    for (int h = 0; h < H; ++h) {
        for (int w = 0; w < W; ++w) {
            T* dst = col + ((int64_t)h * W + w) * 9 * C;
            for (int dy = 0; dy < 3; ++dy) {
                int y = h + dy - 1;
                for (int dx = 0; dx < 3; ++dx) {
                    int x = w + dx - 1;
                    if (y < 0 || y >= H || x < 0 || x >= W) {
                        std::fill(dst, dst + C, T(0));
                    } else {
                        const T* src = in + ((int64_t)y * W + x) * C;
                        std::copy(src, src + C, dst);
                    }
                    dst += C;
                }
            }
        }
    }
}

// scatter-add transpose of im2col_3x3; dX must be zeroed by the caller
template <typename T>
void col2im_3x3(const T* col, int H, int W, int C, T* dX) {
    for (int h = 0; h < H; ++h) {
        for (int w = 0; w < W; ++w) {
            const T* src = col + ((int64_t)h * W + w) * 9 * C;
            for (int dy = 0; dy < 3; ++dy) {
                int y = h + dy - 1;
                for (int dx = 0; dx < 3; ++dx) {
                    int x = w + dx - 1;
                    if (y >= 0 && y < H && x >= 0 && x < W) {
                        T* dst = dX + ((int64_t)y * W + x) * C;
                        for (int c = 0; c < C; ++c) dst[c] += src[c];
                    }
                    src += C;
                }
            }
        }
    }
}

// weight (9C)xK row-major ([3,3,C,K] tensor), in HxWxC -> out HxWxK
template <typename T>
void conv_forward_packed(const T* in, int H, int W, int C, const T* wmat, const T* bias, int K,
                         T* out, std::vector<T>& colbuf) {
    int64_t M = (int64_t)H * W;
    int KC = 9 * C;
    colbuf.resize((size_t)(M * KC));
    im2col_3x3(in, H, W, C, colbuf.data());
    CMapRM<T> col(colbuf.data(), M, KC);
    CMapRM<T> Wm(wmat, KC, K);
    MapRM<T> Y(out, M, K);
    Y.noalias() = col * Wm;
    CMapVec<T> b(bias, K);
    Y.rowwise() += b.transpose();
}

template <typename T>
void conv_backward_packed(const T* in, int H, int W, int C, const T* wmat, int K, const T* dY,
                          T* dW, T* db, T* dX, std::vector<T>& colbuf, std::vector<T>& dcolbuf) {
    int64_t M = (int64_t)H * W;
    int KC = 9 * C;
    colbuf.resize((size_t)(M * KC));
    im2col_3x3(in, H, W, C, colbuf.data());
    CMapRM<T> col(colbuf.data(), M, KC);
    CMapRM<T> dYm(dY, M, K);
    MapRM<T> dWm(dW, KC, K);
    dWm.noalias() += col.transpose() * dYm;
    MapVec<T> dbv(db, K);
    dbv.noalias() += dYm.colwise().sum().transpose();
    if (dX) {
        dcolbuf.resize((size_t)(M * KC));
        MapRM<T> dcol(dcolbuf.data(), M, KC);
        CMapRM<T> Wm(wmat, KC, K);
        dcol.noalias() = dYm * Wm.transpose();
        std::fill(dX, dX + M * C, T(0));
        col2im_3x3(dcolbuf.data(), H, W, C, dX);
    }
}

int conv_in_channels(const std::vector<int>& in_shape) {
    if (in_shape.size() != 3) throw ShapeError("convolution expects an HxWxC activation");
    return in_shape[2];
}

}  // namespace

// ---------------------------------------------------------------------------
// Specs
// ---------------------------------------------------------------------------

LayerSpec LayerSpec::conv(int maps) {
    if (maps <= 0) throw ConfigError("conv feature map count must be positive");
    LayerSpec s;
    s.kind = LayerKind::Conv;
    s.maps = maps;
    return s;
}

LayerSpec LayerSpec::dense(int width) {
    if (width <= 0) throw ConfigError("dense output width must be positive");
    LayerSpec s;
    s.kind = LayerKind::Dense;
    s.width = width;
    return s;
}

LayerSpec LayerSpec::dropout(float rate) {
    if (!(rate >= 0.f && rate < 1.f)) throw ConfigError("dropout rate must be in [0,1)");
    LayerSpec s;
    s.kind = LayerKind::Dropout;
    s.rate = rate;
    return s;
}

std::vector<std::vector<int>> NetworkSpec::chain_shapes() const {
    std::vector<std::vector<int>> shapes;
    shapes.reserve(layers.size());
    std::vector<int> cur = {input_h, input_w, input_c};
    for (const auto& l : layers) {
        switch (l.kind) {
            case LayerKind::Conv:
                if (cur.size() != 3) throw ShapeError("conv layer placed after flatten");
                cur = {cur[0], cur[1], l.maps};
                break;
            case LayerKind::Dense:
                if (cur.size() != 1) throw ShapeError("dense layer requires a flattened input");
                cur = {l.width};
                break;
            case LayerKind::Flatten:
                if (cur.size() != 3) throw ShapeError("flatten requires an HxWxC activation");
                cur = {cur[0] * cur[1] * cur[2]};
                break;
            case LayerKind::Relu:
            case LayerKind::Sigmoid:
            case LayerKind::Dropout:
                break;
        }
        shapes.push_back(cur);
    }
    return shapes;
}

void NetworkSpec::validate() const {
    if (input_h <= 0 || input_w <= 0 || (input_c != 1 && input_c != 3))
        throw ConfigError("network input must be HxWx{1|3} with positive extents");
    if (layers.empty()) throw ConfigError("network has no layers");
    for (const auto& l : layers) {
        if (l.kind == LayerKind::Conv && l.maps <= 0)
            throw ConfigError("conv feature map count must be positive");
        if (l.kind == LayerKind::Dense && l.width <= 0)
            throw ConfigError("dense output width must be positive");
        if (l.kind == LayerKind::Dropout && !(l.rate >= 0.f && l.rate < 1.f))
            throw ConfigError("dropout rate must be in [0,1)");
    }
    chain_shapes();
}

void NetworkSpec::validate_crack_model() const {
    validate();
    if (input_h != 27 || input_w != 27 || input_c != 3)
        throw ConfigError("crack model input must be 27x27x3");
    if (layers.back().kind != LayerKind::Sigmoid)
        throw ConfigError("crack model must end with a sigmoid layer");
    if (output_width() != 25)
        throw ConfigError("crack model must emit exactly 25 structured outputs");
}

int NetworkSpec::output_width() const {
    auto shapes = chain_shapes();
    const auto& out = shapes.back();
    int64_t n = 1;
    for (int e : out) n *= e;
    return static_cast<int>(n);
}

NetworkSpec NetworkSpec::default_crack_model(float dropout_rate) {
    NetworkSpec s;
    s.layers = {LayerSpec::conv(16), LayerSpec::relu(),   LayerSpec::conv(16),
                LayerSpec::relu(),   LayerSpec::conv(32), LayerSpec::relu(),
                LayerSpec::conv(32), LayerSpec::relu(),   LayerSpec::flatten(),
                LayerSpec::dense(64), LayerSpec::relu(),  LayerSpec::dropout(dropout_rate),
                LayerSpec::dense(25), LayerSpec::sigmoid()};
    return s;
}

NetworkSpec gradcheck_mini_spec() {
    // Smooth activations keep the +-epsilon probe windows away from relu
    // kinks; the relu backward is audited separately at a smaller epsilon.
    NetworkSpec s;
    s.input_h = 9;
    s.input_w = 9;
    s.input_c = 3;
    s.layers = {LayerSpec::conv(6),  LayerSpec::sigmoid(), LayerSpec::conv(4), LayerSpec::sigmoid(),
                LayerSpec::flatten(), LayerSpec::dense(25), LayerSpec::sigmoid()};
    return s;
}

// ---------------------------------------------------------------------------
// Params
// ---------------------------------------------------------------------------

template <typename T>
int64_t ParamsT<T>::param_count() const {
    int64_t n = 0;
    for (const auto& e : layers) n += e.weight.size() + e.bias.size();
    return n;
}

template <typename T>
bool ParamsT<T>::all_finite() const {
    for (const auto& e : layers)
        if (!e.weight.all_finite() || !e.bias.all_finite()) return false;
    return true;
}

template <typename T>
void ParamsT<T>::fill_zero() {
    for (auto& e : layers) {
        std::fill(e.weight.data.begin(), e.weight.data.end(), T(0));
        std::fill(e.bias.data.begin(), e.bias.data.end(), T(0));
    }
}

template <typename T>
ParamsT<T> zeros_like(const ParamsT<T>& params) {
    ParamsT<T> out;
    out.layers.resize(params.layers.size());
    for (size_t i = 0; i < params.layers.size(); ++i) {
        const auto& e = params.layers[i];
        if (!e.weight.data.empty()) out.layers[i].weight = TensorT<T>(e.weight.shape);
        if (!e.bias.data.empty()) out.layers[i].bias = TensorT<T>(e.bias.shape);
    }
    return out;
}

template <typename T>
ParamsT<T> he_uniform_init(const NetworkSpec& spec, uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    ParamsT<T> params;
    params.layers.resize(spec.layers.size());
    std::vector<int> cur = {spec.input_h, spec.input_w, spec.input_c};
    auto shapes = spec.chain_shapes();
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = spec.layers[i];
        if (l.kind == LayerKind::Conv) {
            int C = conv_in_channels(cur);
            float limit = std::sqrt(6.0f / (9.0f * (float)C));
            TensorT<T> w({3, 3, C, l.maps});
            for (auto& v : w.data) v = static_cast<T>(rng.uniform_float(-limit, limit));
            params.layers[i].weight = std::move(w);
            params.layers[i].bias = TensorT<T>({l.maps});
        } else if (l.kind == LayerKind::Dense) {
            int in = cur[0];
            float limit = std::sqrt(6.0f / (float)in);
            TensorT<T> w({in, l.width});
            for (auto& v : w.data) v = static_cast<T>(rng.uniform_float(-limit, limit));
            params.layers[i].weight = std::move(w);
            params.layers[i].bias = TensorT<T>({l.width});
        }
        cur = shapes[i];
    }
    return params;
}

// ---------------------------------------------------------------------------
// Layer ops (public contracts)
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& input, const TensorT<T>& kernels, const TensorT<T>& bias,
                          int padding) {
    if (padding != 1) throw ConfigError("conv2d uses zero padding 1");
    if (input.shape.size() != 3) throw ShapeError("conv2d input must be HxWxC");
    if (kernels.shape.size() != 4 || kernels.shape[1] != 3 || kernels.shape[2] != 3)
        throw ShapeError("conv2d kernels must be Kx3x3xC");
    int H = input.shape[0], W = input.shape[1], C = input.shape[2];
    int K = kernels.shape[0];
    if (kernels.shape[3] != C)
        throw ShapeError("kernel channel count " + std::to_string(kernels.shape[3]) +
                         " does not match input channels " + std::to_string(C));
    if (bias.shape != std::vector<int>{K}) throw ShapeError("conv2d bias must have K entries");

    // repack Kx3x3xC -> [3,3,C,K]
    std::vector<T> packed((size_t)9 * C * K);
    for (int k = 0; k < K; ++k)
        for (int t = 0; t < 9; ++t)
            for (int c = 0; c < C; ++c)
                packed[((size_t)t * C + c) * K + k] = kernels.data[((size_t)k * 9 + t) * C + c];

    TensorT<T> out({H, W, K});
    std::vector<T> colbuf;
    conv_forward_packed(input.data.data(), H, W, C, packed.data(), bias.data.data(), K,
                        out.data.data(), colbuf);
    return out;
}

template <typename T>
TensorT<T> dense_forward(const TensorT<T>& input, const TensorT<T>& weights, const TensorT<T>& bias) {
    if (weights.shape.size() != 2) throw ShapeError("dense weights must be a matrix");
    int in = weights.shape[0], out_w = weights.shape[1];
    if (input.size() != in)
        throw ShapeError("flattened input length " + std::to_string(input.size()) +
                         " does not match weight rows " + std::to_string(in));
    if (bias.size() != out_w) throw ShapeError("dense bias length mismatch");
    TensorT<T> out({out_w});
    CMapRM<T> W(weights.data.data(), in, out_w);
    CMapVec<T> x(input.data.data(), in);
    MapVec<T> y(out.data.data(), out_w);
    y.noalias() = W.transpose() * x;
    y += CMapVec<T>(bias.data.data(), out_w);
    return out;
}

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
    TensorT<T> out = x;
    for (auto& v : out.data) v = v > T(0) ? v : T(0);
    return out;
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x) {
    TensorT<T> out = x;
    for (auto& v : out.data) v = T(1) / (T(1) + std::exp(-v));
    return out;
}

template <typename T>
TensorT<T> dropout(const TensorT<T>& x, float rate, Mode mode, Rng& rng,
                   std::vector<uint8_t>* mask_out) {
    if (!(rate >= 0.f && rate < 1.f)) throw ConfigError("dropout rate must be in [0,1)");
    if (mode == Mode::Inference || rate == 0.f) {
        if (mask_out) mask_out->assign(x.data.size(), 1);
        return x;
    }
    TensorT<T> out = x;
    T scale = T(1) / (T(1) - (T)rate);
    if (mask_out) mask_out->assign(x.data.size(), 1);
    for (size_t i = 0; i < out.data.size(); ++i) {
        if (rng.uniform_float() < rate) {
            out.data[i] = T(0);
            if (mask_out) (*mask_out)[i] = 0;
        } else {
            out.data[i] *= scale;
        }
    }
    return out;
}

template <typename T>
T bce_loss(const std::vector<T>& pred, const std::vector<T>& target) {
    if (pred.size() != 25 || target.size() != 25)
        throw ShapeError("structured loss expects exactly 25 outputs");
    T eps = (T)kBceEps;
    T loss = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        T p = std::min(std::max(pred[i], eps), T(1) - eps);
        loss -= target[i] * std::log(p) + (T(1) - target[i]) * std::log(T(1) - p);
    }
    return loss;
}

template <typename T>
T l2_penalty(const ParamsT<T>& params) {
    T acc = 0;
    for (const auto& e : params.layers)
        for (T w : e.weight.data) acc += w * w;
    return T(0.5) * acc;
}

template <typename T>
T total_loss(T data_loss, const ParamsT<T>& params, T beta) {
    if (beta < T(0)) throw ConfigError("l2 beta must be >= 0");
    return beta == T(0) ? data_loss : data_loss + beta * l2_penalty(params);
}

// ---------------------------------------------------------------------------
// Whole network
// ---------------------------------------------------------------------------

template <typename T>
std::vector<T> network_forward(const NetworkSpec& spec, const ParamsT<T>& params,
                               const TensorT<T>& input, Mode mode, ForwardCacheT<T>& cache,
                               Rng* dropout_rng) {
    if (input.shape != std::vector<int>{spec.input_h, spec.input_w, spec.input_c})
        throw ShapeError("network input shape " + shape_str(input.shape) + " must be " +
                         shape_str({spec.input_h, spec.input_w, spec.input_c}));
    if (params.layers.size() != spec.layers.size())
        throw ShapeError("parameter set does not match layer count");

    auto shapes = spec.chain_shapes();
    size_t n = spec.layers.size();
    cache.acts.resize(n);
    cache.masks.resize(n);
    cache.input = input;
    cache.mode = mode;

    std::vector<int> cur_shape = {spec.input_h, spec.input_w, spec.input_c};
    const T* cur = input.data.data();
    int64_t cur_size = input.size();

    for (size_t i = 0; i < n; ++i) {
        const auto& l = spec.layers[i];
        TensorT<T>& out = cache.acts[i];
        if (out.shape != shapes[i]) out = TensorT<T>(shapes[i]);
        switch (l.kind) {
            case LayerKind::Conv: {
                const auto& e = params.layers[i];
                int H = cur_shape[0], W = cur_shape[1], C = cur_shape[2];
                if (e.weight.shape != std::vector<int>{3, 3, C, l.maps})
                    throw ShapeError("conv weight shape mismatch at layer " + std::to_string(i));
                conv_forward_packed(cur, H, W, C, e.weight.data.data(), e.bias.data.data(), l.maps,
                                    out.data.data(), cache.col);
                break;
            }
            case LayerKind::Dense: {
                const auto& e = params.layers[i];
                int in_w = cur_shape[0], out_w = l.width;
                if (e.weight.shape != std::vector<int>{in_w, out_w})
                    throw ShapeError("dense weight shape mismatch at layer " + std::to_string(i));
                CMapRM<T> W(e.weight.data.data(), in_w, out_w);
                CMapVec<T> x(cur, in_w);
                MapVec<T> y(out.data.data(), out_w);
                y.noalias() = W.transpose() * x;
                y += CMapVec<T>(e.bias.data.data(), out_w);
                break;
            }
            case LayerKind::Relu:
                for (int64_t j = 0; j < cur_size; ++j) out.data[(size_t)j] = cur[j] > T(0) ? cur[j] : T(0);
                break;
            case LayerKind::Sigmoid:
                for (int64_t j = 0; j < cur_size; ++j)
                    out.data[(size_t)j] = T(1) / (T(1) + std::exp(-cur[j]));
                break;
            case LayerKind::Dropout: {
                if (mode == Mode::Training && l.rate > 0.f) {
                    if (!dropout_rng)
                        throw StateError("training-mode forward with dropout requires an rng");
                    auto& mask = cache.masks[i];
                    mask.assign((size_t)cur_size, 1);
                    T scale = T(1) / (T(1) - (T)l.rate);
                    for (int64_t j = 0; j < cur_size; ++j) {
                        if (dropout_rng->uniform_float() < l.rate) {
                            out.data[(size_t)j] = T(0);
                            mask[(size_t)j] = 0;
                        } else {
                            out.data[(size_t)j] = cur[j] * scale;
                        }
                    }
                } else {
                    std::copy(cur, cur + cur_size, out.data.begin());
                    cache.masks[i].clear();
                }
                break;
            }
            case LayerKind::Flatten:
                std::copy(cur, cur + cur_size, out.data.begin());
                break;
        }
        cur = out.data.data();
        cur_size = out.size();
        cur_shape = shapes[i];
    }

    std::vector<T> result(cache.acts.back().data.begin(), cache.acts.back().data.end());
    for (T v : result)
        if (!std::isfinite((double)v)) throw NumericError("network output is not finite");
    cache.valid = true;
    return result;
}

template <typename T>
void network_backward(const NetworkSpec& spec, const ParamsT<T>& params, ForwardCacheT<T>& cache,
                      const std::vector<T>& target, T beta, ParamsT<T>& grads) {
    if (!cache.valid) throw StateError("backward requires the cache of a preceding forward pass");
    if (spec.layers.empty() || spec.layers.back().kind != LayerKind::Sigmoid)
        throw ConfigError("structured loss backward requires a final sigmoid layer");
    if ((int64_t)target.size() != cache.acts.back().size())
        throw ShapeError("target length does not match network output");
    if (grads.layers.size() != spec.layers.size())
        throw ShapeError("gradient accumulator does not match layer count");
    cache.valid = false;  // cache is consumed by this pass

    auto shapes = spec.chain_shapes();
    size_t n = spec.layers.size();

    // BCE composed with the final sigmoid: delta at the sigmoid input is
    // prediction - target, exactly.
    const auto& out = cache.acts.back();
    std::vector<T> delta(out.data.size());
    for (size_t j = 0; j < delta.size(); ++j) delta[j] = out.data[j] - target[j];

    std::vector<T> prev_delta;

    // iterate layers from last-1 down to 1; `delta` on entry to layer i is
    // dL/d(output of layer i)
    for (size_t i = n - 1; i > 0; --i) {
        if (i == n - 1) continue;  // sigmoid handled by the fused delta above
        const auto& l = spec.layers[i];
        const TensorT<T>& in_act = cache.acts[i - 1];
        const std::vector<int>& in_shape = shapes[i - 1];
        switch (l.kind) {
            case LayerKind::Conv: {
                const auto& e = params.layers[i];
                int H = in_shape[0], W = in_shape[1], C = in_shape[2];
                prev_delta.resize((size_t)in_act.size());
                conv_backward_packed(in_act.data.data(), H, W, C, e.weight.data.data(), l.maps,
                                     delta.data(), grads.layers[i].weight.data.data(),
                                     grads.layers[i].bias.data.data(), prev_delta.data(), cache.col,
                                     cache.dcol);
                delta.swap(prev_delta);
                break;
            }
            case LayerKind::Dense: {
                const auto& e = params.layers[i];
                int in_w = in_shape[0], out_w = l.width;
                CMapVec<T> x(in_act.data.data(), in_w);
                CMapVec<T> dy(delta.data(), out_w);
                MapRM<T> dW(grads.layers[i].weight.data.data(), in_w, out_w);
                dW.noalias() += x * dy.transpose();
                MapVec<T> db(grads.layers[i].bias.data.data(), out_w);
                db += dy;
                prev_delta.resize((size_t)in_w);
                CMapRM<T> W(e.weight.data.data(), in_w, out_w);
                MapVec<T> dx(prev_delta.data(), in_w);
                dx.noalias() = W * dy;
                delta.swap(prev_delta);
                break;
            }
            case LayerKind::Relu: {
                const auto& y = cache.acts[i];
                for (size_t j = 0; j < delta.size(); ++j)
                    if (!(y.data[j] > T(0))) delta[j] = T(0);
                break;
            }
            case LayerKind::Sigmoid: {
                const auto& y = cache.acts[i];
                for (size_t j = 0; j < delta.size(); ++j)
                    delta[j] *= y.data[j] * (T(1) - y.data[j]);
                break;
            }
            case LayerKind::Dropout: {
                const auto& mask = cache.masks[i];
                if (!mask.empty()) {
                    T scale = T(1) / (T(1) - (T)l.rate);
                    for (size_t j = 0; j < delta.size(); ++j)
                        delta[j] = mask[j] ? delta[j] * scale : T(0);
                }
                break;
            }
            case LayerKind::Flatten:
                break;  // pure reshape
        }
    }

    // layer 0 consumes the network input
    {
        const auto& l = spec.layers[0];
        const TensorT<T>& in_act = cache.input;
        switch (l.kind) {
            case LayerKind::Conv: {
                int H = spec.input_h, W = spec.input_w, C = spec.input_c;
                conv_backward_packed(in_act.data.data(), H, W, C,
                                     params.layers[0].weight.data.data(), l.maps, delta.data(),
                                     grads.layers[0].weight.data.data(),
                                     grads.layers[0].bias.data.data(), (T*)nullptr, cache.col,
                                     cache.dcol);
                break;
            }
            case LayerKind::Dense: {
                int in_w = (int)in_act.size(), out_w = l.width;
                CMapVec<T> x(in_act.data.data(), in_w);
                CMapVec<T> dy(delta.data(), out_w);
                MapRM<T> dW(grads.layers[0].weight.data.data(), in_w, out_w);
                dW.noalias() += x * dy.transpose();
                MapVec<T> db(grads.layers[0].bias.data.data(), out_w);
                db += dy;
                break;
            }
            default:
                break;  // parameter-free first layer: nothing to accumulate
        }
    }

    // Eq. 4 weight-decay term, weights only
    if (beta != T(0)) {
        for (size_t i = 0; i < n; ++i) {
            const auto& w = params.layers[i].weight.data;
            auto& gw = grads.layers[i].weight.data;
            for (size_t j = 0; j < w.size(); ++j) gw[j] += beta * w[j];
        }
    }
}

template <typename T>
ParamsT<T> network_backward(const NetworkSpec& spec, const ParamsT<T>& params,
                            ForwardCacheT<T>& cache, const std::vector<T>& target, T beta) {
    ParamsT<T> grads = zeros_like(params);
    network_backward(spec, params, cache, target, beta, grads);
    return grads;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    if (!(learning_rate > 0.f)) throw ConfigError("learning rate must be > 0");
    if (!(momentum >= 0.f && momentum < 1.f)) throw ConfigError("momentum must be in [0,1)");
    if (batch_size <= 0) throw ConfigError("batch size must be positive");
    if (epochs <= 0) throw ConfigError("epoch count must be positive");
    if (!(l2_beta >= 0.f)) throw ConfigError("l2 beta must be >= 0");
    if (!(dropout_rate >= 0.f && dropout_rate < 1.f)) throw ConfigError("dropout rate must be in [0,1)");
}

void sgd_step(NetworkParams& params, const NetworkParams& grads, const TrainConfig& cfg,
              SgdState& state) {
    if (state.velocity.layers.empty()) state.velocity = zeros_like(params);
    if (grads.layers.size() != params.layers.size())
        throw ShapeError("gradient/parameter layer count mismatch");
    for (size_t i = 0; i < params.layers.size(); ++i) {
        auto step_tensor = [&](std::vector<float>& theta, const std::vector<float>& g,
                               std::vector<float>& v) {
            if (theta.size() != g.size()) throw ShapeError("gradient/parameter shape mismatch");
            for (size_t j = 0; j < theta.size(); ++j) {
                if (!std::isfinite(g[j])) throw NumericError("non-finite gradient in sgd step");
                v[j] = cfg.momentum * v[j] - cfg.learning_rate * g[j];
                theta[j] += v[j];
            }
        };
        step_tensor(params.layers[i].weight.data, grads.layers[i].weight.data,
                    state.velocity.layers[i].weight.data);
        step_tensor(params.layers[i].bias.data, grads.layers[i].bias.data,
                    state.velocity.layers[i].bias.data);
    }
}

// ---------------------------------------------------------------------------
// Finite-difference audit
// ---------------------------------------------------------------------------

GradCheckResult gradient_check(const NetworkSpec& spec, uint64_t seed, double epsilon, double beta,
                               double corrupt) {
    spec.validate();
    auto params = he_uniform_init<double>(spec, seed);

    Rng data_rng(mix64(seed ^ 0x6f7261636c65ULL));
    TensorD input({spec.input_h, spec.input_w, spec.input_c});
    for (auto& v : input.data) v = data_rng.uniform();
    std::vector<double> target((size_t)spec.output_width());
    for (auto& t : target) t = data_rng.bernoulli(0.5) ? 1.0 : 0.0;

    uint64_t mask_seed = mix64(seed ^ 0x64726f70ULL);
    auto loss_at = [&]() {
        ForwardCacheT<double> c;
        Rng drop_rng(mask_seed);  // identical dropout masks for every evaluation
        auto out = network_forward(spec, params, input, Mode::Training, c, &drop_rng);
        return total_loss(bce_loss(out, target), params, beta);
    };

    ForwardCacheT<double> cache;
    Rng drop_rng(mask_seed);
    auto out = network_forward(spec, params, input, Mode::Training, cache, &drop_rng);
    (void)out;
    auto grads = network_backward(spec, params, cache, target, beta);

    if (corrupt != 0.0) {
        for (auto& e : grads.layers)
            if (!e.weight.data.empty()) {
                e.weight.data[0] += corrupt;
                break;
            }
    }

    GradCheckResult res;
    for (size_t i = 0; i < params.layers.size(); ++i) {
        for (int which = 0; which < 2; ++which) {
            auto& theta = which == 0 ? params.layers[i].weight.data : params.layers[i].bias.data;
            const auto& g = which == 0 ? grads.layers[i].weight.data : grads.layers[i].bias.data;
            for (size_t j = 0; j < theta.size(); ++j) {
                double orig = theta[j];
                theta[j] = orig + epsilon;
                double lp = loss_at();
                theta[j] = orig - epsilon;
                double lm = loss_at();
                theta[j] = orig;
                double fd = (lp - lm) / (2.0 * epsilon);
                double a = g[j];
                double rel = std::abs(a - fd) / std::max(1.0, std::abs(a) + std::abs(fd));
                res.max_rel_error = std::max(res.max_rel_error, rel);
                ++res.param_count;
            }
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Batched inference adapter
// ---------------------------------------------------------------------------

BatchPredictor make_predictor(const NetworkSpec& spec, const NetworkParams& params) {
    struct State {
        NetworkSpec spec;
        NetworkParams params;
    };
    auto st = std::make_shared<State>(State{spec, params});
    st->spec.validate();
    int64_t in_size = (int64_t)spec.input_h * spec.input_w * spec.input_c;
    int out_w = st->spec.output_width();
    return [st, in_size, out_w](const float* inputs, int n, float* outputs) {
        ForwardCache cache;
        Tensor x({st->spec.input_h, st->spec.input_w, st->spec.input_c});
        for (int i = 0; i < n; ++i) {
            std::copy(inputs + (int64_t)i * in_size, inputs + (int64_t)(i + 1) * in_size,
                      x.data.begin());
            auto y = network_forward(st->spec, st->params, x, Mode::Inference, cache);
            std::copy(y.begin(), y.end(), outputs + (int64_t)i * out_w);
        }
    };
}

// ---------------------------------------------------------------------------
// Explicit instantiations
// ---------------------------------------------------------------------------

#define CRACKNET_INSTANTIATE(T)                                                                     \
    template struct ParamsT<T>;                                                                     \
    template ParamsT<T> zeros_like<T>(const ParamsT<T>&);                                           \
    template ParamsT<T> he_uniform_init<T>(const NetworkSpec&, uint64_t);                           \
    template TensorT<T> conv2d_forward<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,  \
                                          int);                                                     \
    template TensorT<T> dense_forward<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&);  \
    template TensorT<T> relu<T>(const TensorT<T>&);                                                 \
    template TensorT<T> sigmoid<T>(const TensorT<T>&);                                              \
    template TensorT<T> dropout<T>(const TensorT<T>&, float, Mode, Rng&, std::vector<uint8_t>*);    \
    template T bce_loss<T>(const std::vector<T>&, const std::vector<T>&);                           \
    template T l2_penalty<T>(const ParamsT<T>&);                                                    \
    template T total_loss<T>(T, const ParamsT<T>&, T);                                              \
    template std::vector<T> network_forward<T>(const NetworkSpec&, const ParamsT<T>&,               \
                                               const TensorT<T>&, Mode, ForwardCacheT<T>&, Rng*);   \
    template void network_backward<T>(const NetworkSpec&, const ParamsT<T>&, ForwardCacheT<T>&,     \
                                      const std::vector<T>&, T, ParamsT<T>&);                       \
    template ParamsT<T> network_backward<T>(const NetworkSpec&, const ParamsT<T>&,                  \
                                            ForwardCacheT<T>&, const std::vector<T>&, T);

CRACKNET_INSTANTIATE(float)
CRACKNET_INSTANTIATE(double)
#undef CRACKNET_INSTANTIATE

}  // namespace cracknet
