#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "thh/common.hpp"
#include "thh/rng.hpp"
#include "thh/tensor.hpp"

namespace thh::ad {

// Forward pass behaviour: kTrain samples dropout masks, kEval is the
// deterministic inference path (dropout acts as identity).
enum class Mode { kEval, kTrain };

// A static computation graph over [rows, cols] tensors with reverse-mode
// differentiation. Graphs are built once, buffers are preallocated, and the
// same graph is then driven many times (set inputs -> forward -> backward).
//
// Batching: nodes are either "batched" (their row count follows the current
// batch size, up to the capacity fixed at construction) or static. The last
// partial batch of an epoch is handled by set_batch(); every kernel loops
// over the *runtime* row count.
//
// Parameters live outside the graph (owned by the model or the caller) and
// are registered as weight leaves; their gradients accumulate in graph-owned
// buffers. That way one parameter set can back several graphs of different
// batch sizes without copying.
template <typename T>
class GraphT {
public:
    using Id = std::uint32_t;

    explicit GraphT(std::size_t batch_capacity = 1) : capacity_(batch_capacity ? batch_capacity : 1) {
        batch_ = capacity_;
    }

    GraphT(const GraphT&) = delete;
    GraphT& operator=(const GraphT&) = delete;

    // ---- leaves ----------------------------------------------------------

    Id input(std::size_t cols, bool batched = true, bool requires_grad = false) {
        Node n;
        n.op = Op::kInput;
        n.rows = batched ? capacity_ : 1;
        n.cols = cols;
        n.batched = batched;
        n.needs_grad = requires_grad;
        n.value.assign(n.rows * n.cols, T(0));
        return push(std::move(n));
    }

    // External parameter storage; the graph reads `data` on every forward.
    Id weight(T* data, std::size_t rows, std::size_t cols, bool trainable) {
        Node n;
        n.op = Op::kWeight;
        n.rows = rows;
        n.cols = cols;
        n.batched = false;
        n.needs_grad = trainable;
        n.trainable = trainable;
        n.ext = data;
        return push(std::move(n));
    }

    // ---- neural primitives ----------------------------------------------

    // y = x * w + bias, x:[B,in] w:[in,out] bias:[1,out]
    Id dense(Id x, Id w, Id bias) {
        const Node& nx = at(x);
        const Node& nw = at(w);
        const Node& nb = at(bias);
        require(nx.cols == nw.rows, "dense: x cols " + std::to_string(nx.cols) +
                                        " != w rows " + std::to_string(nw.rows));
        require(nb.rows == 1 && nb.cols == nw.cols, "dense: bias shape mismatch");
        Node n = make_op(Op::kDense, nx.rows, nw.cols, nx.batched, x, w);
        n.c = bias;
        n.needs_grad = nx.needs_grad || nw.needs_grad || nb.needs_grad;
        return push(std::move(n));
    }

    Id relu(Id x) { return push(unary(Op::kRelu, x)); }

    Id dropout(Id x, double rate) {
        require(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0,1)");
        Node n = unary(Op::kDropout, x);
        n.scalar = rate;
        n.aux.assign(n.rows * n.cols, T(0));
        return push(std::move(n));
    }

    // Per-channel max pooling with stride == kernel; kernel must divide the
    // per-channel length exactly.
    Id max_pool1d(Id x, std::size_t channels, std::size_t kernel) {
        const Node& nx = at(x);
        require(kernel >= 1, "max_pool1d: kernel must be >= 1");
        require(channels >= 1 && nx.cols % channels == 0, "max_pool1d: cols not divisible by channels");
        std::size_t len = nx.cols / channels;
        require(len % kernel == 0, "max_pool1d: kernel " + std::to_string(kernel) +
                                       " does not divide channel length " + std::to_string(len));
        Node n = make_op(Op::kMaxPool, nx.rows, channels * (len / kernel), nx.batched, x);
        n.channels = channels;
        n.kernel = kernel;
        n.needs_grad = nx.needs_grad;
        n.iaux.assign(n.rows * n.cols, 0);
        return push(std::move(n));
    }

    // Per-channel linear interpolation from in_len points to out_len points,
    // with the endpoints mapped exactly onto each other.
    Id upsample_linear1d(Id x, std::size_t channels, std::size_t out_len) {
        const Node& nx = at(x);
        require(channels >= 1 && nx.cols % channels == 0, "upsample_linear1d: cols not divisible by channels");
        std::size_t in_len = nx.cols / channels;
        require(in_len >= 1 && out_len >= 1, "upsample_linear1d: empty signal");
        Node n = make_op(Op::kUpsample, nx.rows, channels * out_len, nx.batched, x);
        n.channels = channels;
        n.win = in_len;
        n.needs_grad = nx.needs_grad;
        n.up_i0.resize(out_len);
        n.up_w.resize(out_len);
        for (std::size_t j = 0; j < out_len; ++j) {
            double s = out_len == 1 ? 0.0
                                    : static_cast<double>(j) * static_cast<double>(in_len - 1) /
                                          static_cast<double>(out_len - 1);
            std::size_t i0 = static_cast<std::size_t>(s);
            if (in_len >= 2 && i0 > in_len - 2) i0 = in_len - 2;
            n.up_i0[j] = static_cast<std::int32_t>(i0);
            n.up_w[j] = static_cast<T>(in_len == 1 ? 0.0 : s - static_cast<double>(i0));
        }
        return push(std::move(n));
    }

    // ---- elementwise -----------------------------------------------------

    Id add(Id a, Id b) { return push(binary(Op::kAdd, a, b)); }
    Id sub(Id a, Id b) { return push(binary(Op::kSub, a, b)); }
    Id mul(Id a, Id b) { return push(binary(Op::kMul, a, b)); }
    Id divide(Id a, Id b) { return push(binary(Op::kDiv, a, b)); }

    Id scale(Id x, double s) {
        Node n = unary(Op::kScale, x);
        n.scalar = s;
        return push(std::move(n));
    }

    Id add_scalar(Id x, double s) {
        Node n = unary(Op::kAddScalar, x);
        n.scalar = s;
        return push(std::move(n));
    }

    // y = x^p on x >= 0 (negative inputs are treated as 0).
    Id pow_scalar(Id x, double p) {
        Node n = unary(Op::kPow, x);
        n.scalar = p;
        return push(std::move(n));
    }

    // y_i = min(|x_i|, cap)
    Id clamp_abs(Id x, double cap) {
        require(cap > 0.0, "clamp_abs: cap must be positive");
        Node n = unary(Op::kClampAbs, x);
        n.scalar = cap;
        return push(std::move(n));
    }

    // [1, n] static row replicated across the current batch.
    Id broadcast_rows(Id x) {
        const Node& nx = at(x);
        require(!nx.batched && nx.rows == 1, "broadcast_rows: source must be a single static row");
        Node n = make_op(Op::kBroadcast, capacity_, nx.cols, true, x);
        n.needs_grad = nx.needs_grad;
        return push(std::move(n));
    }

    // ---- window placement -------------------------------------------------

    // Places a [*, n_src_channels * win] block into a zero canvas of
    // [B, channels * out_len]. channel_map[j] names the destination channel of
    // source block j. The write offset is per-row adjustable; with wrap=true
    // offsets wrap modulo out_len, otherwise offset + win must fit.
    Id embed_window(Id x, std::size_t channels, std::size_t out_len,
                    std::vector<std::size_t> channel_map, std::size_t win,
                    long offset, bool wrap = false) {
        const Node& nx = at(x);
        require(!channel_map.empty(), "embed_window: empty channel map");
        require(nx.cols == channel_map.size() * win, "embed_window: source cols mismatch");
        for (std::size_t c : channel_map)
            require(c < channels, "embed_window: channel index out of range");
        require(win <= out_len, "embed_window: window longer than output");
        Node n = make_op(Op::kEmbed, capacity_, channels * out_len, true, x);
        n.channels = channels;
        n.win = win;
        n.wrap = wrap;
        n.channel_map = std::move(channel_map);
        n.needs_grad = nx.needs_grad;
        n.offsets.assign(capacity_, 0);
        Id id = push(std::move(n));
        set_window_offset(id, offset);
        return id;
    }

    // Extracts [B, channels * win] from [B, channels * in_len] at a per-row
    // adjustable offset; wraps modulo in_len when wrap=true.
    Id slice_window(Id x, std::size_t channels, std::size_t win, long offset, bool wrap = false) {
        const Node& nx = at(x);
        require(channels >= 1 && nx.cols % channels == 0, "slice_window: cols not divisible by channels");
        std::size_t in_len = nx.cols / channels;
        require(win <= in_len, "slice_window: window longer than input");
        Node n = make_op(Op::kSlice, nx.rows, channels * win, nx.batched, x);
        n.channels = channels;
        n.win = win;
        n.wrap = wrap;
        n.needs_grad = nx.needs_grad;
        n.offsets.assign(n.rows, 0);
        Id id = push(std::move(n));
        set_window_offset(id, offset);
        return id;
    }

    void set_window_offset(Id id, long offset) {
        Node& n = nodes_[id];
        long norm = normalize_offset(n, offset);
        for (auto& o : n.offsets) o = static_cast<std::int32_t>(norm);
    }

    void set_window_offsets(Id id, std::span<const long> offsets) {
        Node& n = nodes_[id];
        require(offsets.size() <= n.offsets.size(), "set_window_offsets: more offsets than rows");
        for (std::size_t i = 0; i < offsets.size(); ++i)
            n.offsets[i] = static_cast<std::int32_t>(normalize_offset(n, offsets[i]));
    }

    // ---- reductions (all produce a static [1,1] scalar unless noted) ------

    Id mse(Id a, Id b) { return push(reduce2(Op::kMse, a, b)); }
    Id mae(Id a, Id b) { return push(reduce2(Op::kMae, a, b)); }

    Id mean_abs(Id x) { return push(reduce1(Op::kMeanAbs, x)); }
    Id mean_all(Id x) { return push(reduce1(Op::kMeanAll, x)); }

    // Mean over rows of the per-row cosine distance 1 - <a,b>/(|a||b|).
    // A row where either operand has norm < 1e-12 contributes distance 1
    // with zero gradient.
    Id cosine_distance_mean(Id a, Id b) { return push(reduce2(Op::kCosDist, a, b)); }

    // Mean over rows of the per-row Euclidean norm.
    Id l2_norm_mean(Id x) { return push(reduce1(Op::kL2Mean, x)); }

    // Per-row RMS, shape [B, 1] (not a scalar).
    Id rms_rowwise(Id x) {
        const Node& nx = at(x);
        Node n = make_op(Op::kRmsRowwise, nx.rows, 1, nx.batched, x);
        n.needs_grad = nx.needs_grad;
        return push(std::move(n));
    }

    // Mean over rows of (1/(C*(W-1))) * sum_c sum_t (x[c,t+1]-x[c,t])^2.
    Id smoothness1d(Id x, std::size_t channels) {
        const Node& nx = at(x);
        require(channels >= 1 && nx.cols % channels == 0, "smoothness1d: cols not divisible by channels");
        require(nx.cols / channels >= 2, "smoothness1d: needs at least 2 samples per channel");
        Node n = make_op(Op::kSmooth, 1, 1, false, x);
        n.channels = channels;
        n.needs_grad = nx.needs_grad;
        return push(std::move(n));
    }

    // ---- runtime -----------------------------------------------------------

    std::size_t batch_capacity() const { return capacity_; }
    std::size_t batch() const { return batch_; }

    void set_batch(std::size_t b) {
        require(b >= 1 && b <= capacity_, "set_batch: batch size out of range");
        batch_ = b;
    }

    void set_input(Id id, std::span<const T> values) {
        Node& n = nodes_[id];
        require(n.op == Op::kInput, "set_input: node is not an input");
        std::size_t want = runtime_rows(n) * n.cols;
        require(values.size() == want, "set_input: expected " + std::to_string(want) +
                                           " values, got " + std::to_string(values.size()));
        std::copy(values.begin(), values.end(), n.value.begin());
    }

    std::span<const T> value(Id id) const {
        const Node& n = nodes_[id];
        const T* p = n.op == Op::kWeight ? n.ext : n.value.data();
        return {p, runtime_rows(n) * n.cols};
    }

    std::span<T> grad(Id id) {
        Node& n = nodes_[id];
        return {n.grad.data(), runtime_rows(n) * n.cols};
    }

    std::size_t rows(Id id) const { return runtime_rows(nodes_[id]); }
    std::size_t cols(Id id) const { return nodes_[id].cols; }
    bool trainable(Id id) const { return nodes_[id].trainable; }

    void set_dropout_seed(std::uint64_t seed) { dropout_key_ = mix64(seed ^ 0x8f1bbcdcbfa53e0bull); }

    // When enabled, forward() throws on the first non-finite value it
    // produces. Off by default (it is a debugging aid; the training loops
    // check their loss scalars instead).
    void set_check_finite(bool on) { check_finite_ = on; }

    void forward(Mode mode) {
        if (mode == Mode::kTrain) ++pass_;
        for (Node& n : nodes_) forward_node(n, mode);
    }

    // Reverse sweep from a scalar node. Gradients of all trainable weights
    // and requires_grad inputs are (re)computed; with accumulate=true the
    // leaf gradients add onto whatever is already in their buffers (interior
    // buffers are always cleared -- they are per-pass scratch).
    void backward(Id loss, bool accumulate = false) {
        Node& ln = nodes_[loss];
        require(ln.cols == 1 && runtime_rows(ln) == 1, "backward: loss is not a scalar");
        if (!accumulate) {
            zero_grad();
        } else {
            for (Node& n : nodes_)
                if (!n.grad.empty() && n.op != Op::kWeight && n.op != Op::kInput)
                    std::fill(n.grad.begin(), n.grad.end(), T(0));
        }
        if (ln.grad.empty()) return; // loss does not depend on anything trainable
        ln.grad[0] += T(1);
        for (std::size_t i = nodes_.size(); i-- > 0;) backward_node(nodes_[i]);
    }

    void zero_grad() {
        for (Node& n : nodes_)
            if (!n.grad.empty()) std::fill(n.grad.begin(), n.grad.end(), T(0));
    }

    // Multiplies every gradient buffer by s (used when gradients from several
    // accumulated passes need averaging before an optimizer step).
    void scale_grads(double s) {
        for (Node& n : nodes_)
            for (T& g : n.grad) g = static_cast<T>(g * s);
    }

private:
    enum class Op : std::uint8_t {
        kInput, kWeight,
        kDense, kRelu, kDropout, kMaxPool, kUpsample,
        kAdd, kSub, kMul, kDiv, kScale, kAddScalar, kPow, kClampAbs, kBroadcast,
        kEmbed, kSlice,
        kMse, kMae, kMeanAbs, kMeanAll, kCosDist, kL2Mean, kRmsRowwise, kSmooth,
    };

    struct Node {
        Op op = Op::kInput;
        Id a = 0, b = 0, c = 0;
        std::size_t rows = 0, cols = 0;
        bool batched = false;
        bool needs_grad = false;
        bool trainable = false;
        std::size_t channels = 0, win = 0, kernel = 0;
        double scalar = 0.0;
        bool wrap = false;
        std::vector<std::size_t> channel_map;
        std::vector<std::int32_t> offsets;
        std::vector<T> value;
        std::vector<T> grad;
        std::vector<T> aux;            // dropout multipliers
        std::vector<std::int32_t> iaux; // max pool argmax (input column)
        std::vector<std::int32_t> up_i0;
        std::vector<T> up_w;
        const T* ext = nullptr;
        // per-row scratch for reductions (cosine terms, row norms)
        std::vector<double> scratch;
    };

    std::vector<Node> nodes_;
    std::size_t capacity_ = 1;
    std::size_t batch_ = 1;
    std::uint64_t dropout_key_ = mix64(0x8f1bbcdcbfa53e0bull);
    std::uint64_t pass_ = 0;
    bool check_finite_ = false;

    static void require(bool ok, const std::string& msg) {
        if (!ok) throw Error("graph: " + msg);
    }

    const Node& at(Id id) const {
        require(id < nodes_.size(), "operand id out of range");
        return nodes_[id];
    }

    std::size_t runtime_rows(const Node& n) const { return n.batched ? batch_ : n.rows; }

    long normalize_offset(const Node& n, long offset) const {
        std::size_t len = n.op == Op::kEmbed ? n.cols / n.channels : nodes_[n.a].cols / n.channels;
        if (n.wrap) {
            long l = static_cast<long>(len);
            long m = offset % l;
            return m < 0 ? m + l : m;
        }
        require(offset >= 0 && static_cast<std::size_t>(offset) + n.win <= len,
                "window offset " + std::to_string(offset) + " out of range for length " +
                    std::to_string(len));
        return offset;
    }

    Node make_op(Op op, std::size_t rows, std::size_t cols, bool batched, Id a, Id b = 0) {
        Node n;
        n.op = op;
        n.a = a;
        n.b = b;
        n.rows = rows;
        n.cols = cols;
        n.batched = batched;
        n.value.assign(rows * cols, T(0));
        return n;
    }

    Node unary(Op op, Id x) {
        const Node& nx = at(x);
        Node n = make_op(op, nx.rows, nx.cols, nx.batched, x);
        n.needs_grad = nx.needs_grad;
        return n;
    }

    Node binary(Op op, Id a, Id b) {
        const Node& na = at(a);
        const Node& nb = at(b);
        require(na.cols == nb.cols && na.rows == nb.rows && na.batched == nb.batched,
                op_name(op) + std::string(": operand shape mismatch"));
        Node n = make_op(op, na.rows, na.cols, na.batched, a, b);
        n.needs_grad = na.needs_grad || nb.needs_grad;
        return n;
    }

    Node reduce1(Op op, Id x) {
        const Node& nx = at(x);
        Node n = make_op(op, 1, 1, false, x);
        n.needs_grad = nx.needs_grad;
        if (op == Op::kL2Mean) n.scratch.assign(nx.rows, 0.0);
        return n;
    }

    Node reduce2(Op op, Id a, Id b) {
        const Node& na = at(a);
        const Node& nb = at(b);
        require(na.cols == nb.cols && na.rows == nb.rows && na.batched == nb.batched,
                op_name(op) + std::string(": operand shape mismatch"));
        Node n = make_op(op, 1, 1, false, a, b);
        n.needs_grad = na.needs_grad || nb.needs_grad;
        if (op == Op::kCosDist) n.scratch.assign(3 * na.rows, 0.0);
        return n;
    }

    static const char* op_name(Op op) {
        switch (op) {
            case Op::kInput: return "input";
            case Op::kWeight: return "weight";
            case Op::kDense: return "dense";
            case Op::kRelu: return "relu";
            case Op::kDropout: return "dropout";
            case Op::kMaxPool: return "max_pool1d";
            case Op::kUpsample: return "upsample_linear1d";
            case Op::kAdd: return "add";
            case Op::kSub: return "sub";
            case Op::kMul: return "mul";
            case Op::kDiv: return "divide";
            case Op::kScale: return "scale";
            case Op::kAddScalar: return "add_scalar";
            case Op::kPow: return "pow_scalar";
            case Op::kClampAbs: return "clamp_abs";
            case Op::kBroadcast: return "broadcast_rows";
            case Op::kEmbed: return "embed_window";
            case Op::kSlice: return "slice_window";
            case Op::kMse: return "mse";
            case Op::kMae: return "mae";
            case Op::kMeanAbs: return "mean_abs";
            case Op::kMeanAll: return "mean_all";
            case Op::kCosDist: return "cosine_distance_mean";
            case Op::kL2Mean: return "l2_norm_mean";
            case Op::kRmsRowwise: return "rms_rowwise";
            case Op::kSmooth: return "smoothness1d";
        }
        return "?";
    }

    Id push(Node&& n) {
        if (n.needs_grad && n.grad.empty()) n.grad.assign(n.op == Op::kWeight ? n.rows * n.cols : n.value.size(), T(0));
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size() - 1);
    }

    const T* val_ptr(const Node& n) const { return n.op == Op::kWeight ? n.ext : n.value.data(); }

    void check_node_finite(const Node& n) {
        if (!check_finite_) return;
        std::size_t count = runtime_rows(n) * n.cols;
        const T* v = val_ptr(n);
        for (std::size_t i = 0; i < count; ++i)
            if (!std::isfinite(static_cast<double>(v[i])))
                throw Error(std::string("graph: non-finite value out of ") + op_name(n.op));
    }

    // ---- forward kernels ---------------------------------------------------

    void forward_node(Node& n, Mode mode) {
        const std::size_t R = runtime_rows(n);
        switch (n.op) {
            case Op::kInput:
            case Op::kWeight:
                break;
            case Op::kDense: {
                const Node& x = nodes_[n.a];
                const Node& w = nodes_[n.b];
                const Node& bias = nodes_[n.c];
                const std::size_t in = w.rows, out = w.cols;
                const T* xp = val_ptr(x);
                const T* wp = val_ptr(w);
                const T* bp = val_ptr(bias);
                for (std::size_t i = 0; i < R; ++i) {
                    T* y = n.value.data() + i * out;
                    for (std::size_t j = 0; j < out; ++j) y[j] = bp[j];
                    const T* xr = xp + i * in;
                    for (std::size_t k = 0; k < in; ++k) {
                        const T xv = xr[k];
                        if (xv == T(0)) continue;
                        const T* wr = wp + k * out;
                        for (std::size_t j = 0; j < out; ++j) y[j] += xv * wr[j];
                    }
                }
                break;
            }
            case Op::kRelu: {
                const T* x = val_ptr(nodes_[n.a]);
                for (std::size_t i = 0; i < R * n.cols; ++i) n.value[i] = x[i] > T(0) ? x[i] : T(0);
                break;
            }
            case Op::kDropout: {
                const T* x = val_ptr(nodes_[n.a]);
                if (mode == Mode::kEval || n.scalar == 0.0) {
                    std::copy(x, x + R * n.cols, n.value.begin());
                    std::fill(n.aux.begin(), n.aux.end(), T(1));
                } else {
                    const double rate = n.scalar;
                    const T inv_keep = static_cast<T>(1.0 / (1.0 - rate));
                    const std::uint64_t node_key =
                        dropout_key_ ^ mix64((&n - nodes_.data()) * 0x9e3779b97f4a7c15ull + pass_);
                    for (std::size_t i = 0; i < R * n.cols; ++i) {
                        double u = static_cast<double>(mix64(node_key + i) >> 11) * 0x1.0p-53;
                        T m = u < rate ? T(0) : inv_keep;
                        n.aux[i] = m;
                        n.value[i] = x[i] * m;
                    }
                }
                break;
            }
            case Op::kMaxPool: {
                const Node& x = nodes_[n.a];
                const T* xp = val_ptr(x);
                const std::size_t in_len = x.cols / n.channels;
                const std::size_t out_len = in_len / n.kernel;
                for (std::size_t i = 0; i < R; ++i) {
                    const T* xr = xp + i * x.cols;
                    T* y = n.value.data() + i * n.cols;
                    std::int32_t* arg = n.iaux.data() + i * n.cols;
                    for (std::size_t c = 0; c < n.channels; ++c) {
                        for (std::size_t j = 0; j < out_len; ++j) {
                            std::size_t base = c * in_len + j * n.kernel;
                            T best = xr[base];
                            std::size_t bi = base;
                            for (std::size_t k = 1; k < n.kernel; ++k)
                                if (xr[base + k] > best) { best = xr[base + k]; bi = base + k; }
                            y[c * out_len + j] = best;
                            arg[c * out_len + j] = static_cast<std::int32_t>(bi);
                        }
                    }
                }
                break;
            }
            case Op::kUpsample: {
                const Node& x = nodes_[n.a];
                const T* xp = val_ptr(x);
                const std::size_t in_len = n.win;
                const std::size_t out_len = n.cols / n.channels;
                for (std::size_t i = 0; i < R; ++i) {
                    const T* xr = xp + i * x.cols;
                    T* y = n.value.data() + i * n.cols;
                    for (std::size_t c = 0; c < n.channels; ++c) {
                        const T* xc = xr + c * in_len;
                        T* yc = y + c * out_len;
                        for (std::size_t j = 0; j < out_len; ++j) {
                            std::size_t i0 = static_cast<std::size_t>(n.up_i0[j]);
                            std::size_t i1 = in_len == 1 ? 0 : i0 + 1;
                            T w = n.up_w[j];
                            yc[j] = (T(1) - w) * xc[i0] + w * xc[i1];
                        }
                    }
                }
                break;
            }
            case Op::kAdd: {
                const T* a = val_ptr(nodes_[n.a]);
                const T* b = val_ptr(nodes_[n.b]);
                for (std::size_t i = 0; i < R * n.cols; ++i) n.value[i] = a[i] + b[i];
                break;
            }
            case Op::kSub: {
                const T* a = val_ptr(nodes_[n.a]);
                const T* b = val_ptr(nodes_[n.b]);
                for (std::size_t i = 0; i < R * n.cols; ++i) n.value[i] = a[i] - b[i];
                break;
            }
            case Op::kMul: {
                const T* a = val_ptr(nodes_[n.a]);
                const T* b = val_ptr(nodes_[n.b]);
                for (std::size_t i = 0; i < R * n.cols; ++i) n.value[i] = a[i] * b[i];
                break;
            }
            case Op::kDiv: {
                const T* a = val_ptr(nodes_[n.a]);
                const T* b = val_ptr(nodes_[n.b]);
                for (std::size_t i = 0; i < R * n.cols; ++i) n.value[i] = a[i] / b[i];
                break;
            }
            case Op::kScale: {
                const T* x = val_ptr(nodes_[n.a]);
                const T s = static_cast<T>(n.scalar);
                for (std::size_t i = 0; i < R * n.cols; ++i) n.value[i] = s * x[i];
                break;
            }
            case Op::kAddScalar: {
                const T* x = val_ptr(nodes_[n.a]);
                const T s = static_cast<T>(n.scalar);
                for (std::size_t i = 0; i < R * n.cols; ++i) n.value[i] = x[i] + s;
                break;
            }
            case Op::kPow: {
                const T* x = val_ptr(nodes_[n.a]);
                const double p = n.scalar;
                for (std::size_t i = 0; i < R * n.cols; ++i) {
                    double v = static_cast<double>(x[i]);
                    n.value[i] = static_cast<T>(v > 0.0 ? std::pow(v, p) : 0.0);
                }
                break;
            }
            case Op::kClampAbs: {
                const T* x = val_ptr(nodes_[n.a]);
                const T cap = static_cast<T>(n.scalar);
                for (std::size_t i = 0; i < R * n.cols; ++i) {
                    T v = x[i] < T(0) ? -x[i] : x[i];
                    n.value[i] = v < cap ? v : cap;
                }
                break;
            }
            case Op::kBroadcast: {
                const T* x = val_ptr(nodes_[n.a]);
                for (std::size_t i = 0; i < R; ++i)
                    std::copy(x, x + n.cols, n.value.data() + i * n.cols);
                break;
            }
            case Op::kEmbed: {
                const Node& x = nodes_[n.a];
                const T* xp = val_ptr(x);
                const std::size_t out_len = n.cols / n.channels;
                const std::size_t xrows = runtime_rows(x);
                std::fill(n.value.begin(), n.value.begin() + R * n.cols, T(0));
                for (std::size_t i = 0; i < R; ++i) {
                    const T* xr = xp + (x.batched ? i : (xrows == 1 ? 0 : i % xrows)) * x.cols;
                    T* y = n.value.data() + i * n.cols;
                    const std::size_t off = static_cast<std::size_t>(n.offsets[i]);
                    for (std::size_t j = 0; j < n.channel_map.size(); ++j) {
                        T* yc = y + n.channel_map[j] * out_len;
                        const T* xj = xr + j * n.win;
                        if (!n.wrap) {
                            for (std::size_t t = 0; t < n.win; ++t) yc[off + t] += xj[t];
                        } else {
                            for (std::size_t t = 0; t < n.win; ++t) yc[(off + t) % out_len] += xj[t];
                        }
                    }
                }
                break;
            }
            case Op::kSlice: {
                const Node& x = nodes_[n.a];
                const T* xp = val_ptr(x);
                const std::size_t in_len = x.cols / n.channels;
                for (std::size_t i = 0; i < R; ++i) {
                    const T* xr = xp + i * x.cols;
                    T* y = n.value.data() + i * n.cols;
                    const std::size_t off = static_cast<std::size_t>(n.offsets[i]);
                    for (std::size_t c = 0; c < n.channels; ++c) {
                        const T* xc = xr + c * in_len;
                        T* yc = y + c * n.win;
                        if (!n.wrap) {
                            for (std::size_t t = 0; t < n.win; ++t) yc[t] = xc[off + t];
                        } else {
                            for (std::size_t t = 0; t < n.win; ++t) yc[t] = xc[(off + t) % in_len];
                        }
                    }
                }
                break;
            }
            case Op::kMse: {
                const Node& a = nodes_[n.a];
                const T* ap = val_ptr(a);
                const T* bp = val_ptr(nodes_[n.b]);
                const std::size_t count = runtime_rows(a) * a.cols;
                double acc = 0.0;
                for (std::size_t i = 0; i < count; ++i) {
                    double d = static_cast<double>(ap[i]) - static_cast<double>(bp[i]);
                    acc += d * d;
                }
                n.value[0] = static_cast<T>(acc / static_cast<double>(count));
                break;
            }
            case Op::kMae: {
                const Node& a = nodes_[n.a];
                const T* ap = val_ptr(a);
                const T* bp = val_ptr(nodes_[n.b]);
                const std::size_t count = runtime_rows(a) * a.cols;
                double acc = 0.0;
                for (std::size_t i = 0; i < count; ++i)
                    acc += std::abs(static_cast<double>(ap[i]) - static_cast<double>(bp[i]));
                n.value[0] = static_cast<T>(acc / static_cast<double>(count));
                break;
            }
            case Op::kMeanAbs: {
                const Node& x = nodes_[n.a];
                const T* xp = val_ptr(x);
                const std::size_t count = runtime_rows(x) * x.cols;
                double acc = 0.0;
                for (std::size_t i = 0; i < count; ++i) acc += std::abs(static_cast<double>(xp[i]));
                n.value[0] = static_cast<T>(acc / static_cast<double>(count));
                break;
            }
            case Op::kMeanAll: {
                const Node& x = nodes_[n.a];
                const T* xp = val_ptr(x);
                const std::size_t count = runtime_rows(x) * x.cols;
                double acc = 0.0;
                for (std::size_t i = 0; i < count; ++i) acc += static_cast<double>(xp[i]);
                n.value[0] = static_cast<T>(acc / static_cast<double>(count));
                break;
            }
            case Op::kCosDist: {
                const Node& a = nodes_[n.a];
                const T* ap = val_ptr(a);
                const T* bp = val_ptr(nodes_[n.b]);
                const std::size_t rows = runtime_rows(a);
                double acc = 0.0;
                for (std::size_t r = 0; r < rows; ++r) {
                    const T* ar = ap + r * a.cols;
                    const T* br = bp + r * a.cols;
                    double na = 0.0, nb = 0.0, dot = 0.0;
                    for (std::size_t j = 0; j < a.cols; ++j) {
                        double av = ar[j], bv = br[j];
                        na += av * av;
                        nb += bv * bv;
                        dot += av * bv;
                    }
                    na = std::sqrt(na);
                    nb = std::sqrt(nb);
                    n.scratch[3 * r] = na;
                    n.scratch[3 * r + 1] = nb;
                    n.scratch[3 * r + 2] = dot;
                    acc += (na < kNormEps || nb < kNormEps) ? 1.0 : 1.0 - dot / (na * nb);
                }
                n.value[0] = static_cast<T>(acc / static_cast<double>(rows));
                break;
            }
            case Op::kL2Mean: {
                const Node& x = nodes_[n.a];
                const T* xp = val_ptr(x);
                const std::size_t rows = runtime_rows(x);
                double acc = 0.0;
                for (std::size_t r = 0; r < rows; ++r) {
                    const T* xr = xp + r * x.cols;
                    double s = 0.0;
                    for (std::size_t j = 0; j < x.cols; ++j) s += static_cast<double>(xr[j]) * xr[j];
                    s = std::sqrt(s);
                    n.scratch[r] = s;
                    acc += s;
                }
                n.value[0] = static_cast<T>(acc / static_cast<double>(rows));
                break;
            }
            case Op::kRmsRowwise: {
                const Node& x = nodes_[n.a];
                const T* xp = val_ptr(x);
                for (std::size_t r = 0; r < R; ++r) {
                    const T* xr = xp + r * x.cols;
                    double s = 0.0;
                    for (std::size_t j = 0; j < x.cols; ++j) s += static_cast<double>(xr[j]) * xr[j];
                    n.value[r] = static_cast<T>(std::sqrt(s / static_cast<double>(x.cols)));
                }
                break;
            }
            case Op::kSmooth: {
                const Node& x = nodes_[n.a];
                const T* xp = val_ptr(x);
                const std::size_t rows = runtime_rows(x);
                const std::size_t len = x.cols / n.channels;
                double acc = 0.0;
                for (std::size_t r = 0; r < rows; ++r) {
                    const T* xr = xp + r * x.cols;
                    double s = 0.0;
                    for (std::size_t c = 0; c < n.channels; ++c) {
                        const T* xc = xr + c * len;
                        for (std::size_t t = 0; t + 1 < len; ++t) {
                            double d = static_cast<double>(xc[t + 1]) - static_cast<double>(xc[t]);
                            s += d * d;
                        }
                    }
                    acc += s / (static_cast<double>(n.channels) * static_cast<double>(len - 1));
                }
                n.value[0] = static_cast<T>(acc / static_cast<double>(rows));
                break;
            }
        }
        check_node_finite(n);
    }

    // ---- backward kernels ---------------------------------------------------

    void backward_node(Node& n) {
        if (!n.needs_grad || n.grad.empty()) return;
        const std::size_t R = runtime_rows(n);
        Node* pa = n.op == Op::kInput || n.op == Op::kWeight ? nullptr : &nodes_[n.a];
        switch (n.op) {
            case Op::kInput:
            case Op::kWeight:
                break;
            case Op::kDense: {
                Node& x = *pa;
                Node& w = nodes_[n.b];
                Node& bias = nodes_[n.c];
                const std::size_t in = w.rows, out = w.cols;
                const T* xp = val_ptr(x);
                const T* wp = val_ptr(w);
                for (std::size_t i = 0; i < R; ++i) {
                    const T* dy = n.grad.data() + i * out;
                    if (x.needs_grad) {
                        T* dx = x.grad.data() + i * in;
                        for (std::size_t k = 0; k < in; ++k) {
                            const T* wr = wp + k * out;
                            T acc = T(0);
                            for (std::size_t j = 0; j < out; ++j) acc += dy[j] * wr[j];
                            dx[k] += acc;
                        }
                    }
                    if (w.needs_grad) {
                        const T* xr = xp + i * in;
                        for (std::size_t k = 0; k < in; ++k) {
                            const T xv = xr[k];
                            if (xv == T(0)) continue;
                            T* dw = w.grad.data() + k * out;
                            for (std::size_t j = 0; j < out; ++j) dw[j] += xv * dy[j];
                        }
                    }
                    if (bias.needs_grad) {
                        T* db = bias.grad.data();
                        for (std::size_t j = 0; j < out; ++j) db[j] += dy[j];
                    }
                }
                break;
            }
            case Op::kRelu: {
                if (!pa->needs_grad) break;
                const T* x = val_ptr(*pa);
                T* dx = pa->grad.data();
                for (std::size_t i = 0; i < R * n.cols; ++i)
                    if (x[i] > T(0)) dx[i] += n.grad[i];
                break;
            }
            case Op::kDropout: {
                if (!pa->needs_grad) break;
                T* dx = pa->grad.data();
                for (std::size_t i = 0; i < R * n.cols; ++i) dx[i] += n.grad[i] * n.aux[i];
                break;
            }
            case Op::kMaxPool: {
                if (!pa->needs_grad) break;
                T* dx = pa->grad.data();
                for (std::size_t i = 0; i < R; ++i) {
                    const T* dy = n.grad.data() + i * n.cols;
                    const std::int32_t* arg = n.iaux.data() + i * n.cols;
                    T* dxr = dx + i * pa->cols;
                    for (std::size_t j = 0; j < n.cols; ++j) dxr[arg[j]] += dy[j];
                }
                break;
            }
            case Op::kUpsample: {
                if (!pa->needs_grad) break;
                const std::size_t in_len = n.win;
                const std::size_t out_len = n.cols / n.channels;
                for (std::size_t i = 0; i < R; ++i) {
                    const T* dy = n.grad.data() + i * n.cols;
                    T* dx = pa->grad.data() + i * pa->cols;
                    for (std::size_t c = 0; c < n.channels; ++c) {
                        const T* dyc = dy + c * out_len;
                        T* dxc = dx + c * in_len;
                        for (std::size_t j = 0; j < out_len; ++j) {
                            std::size_t i0 = static_cast<std::size_t>(n.up_i0[j]);
                            std::size_t i1 = in_len == 1 ? 0 : i0 + 1;
                            T w = n.up_w[j];
                            dxc[i0] += (T(1) - w) * dyc[j];
                            dxc[i1] += w * dyc[j];
                        }
                    }
                }
                break;
            }
            case Op::kAdd: {
                Node& b = nodes_[n.b];
                if (pa->needs_grad)
                    for (std::size_t i = 0; i < R * n.cols; ++i) pa->grad[i] += n.grad[i];
                if (b.needs_grad)
                    for (std::size_t i = 0; i < R * n.cols; ++i) b.grad[i] += n.grad[i];
                break;
            }
            case Op::kSub: {
                Node& b = nodes_[n.b];
                if (pa->needs_grad)
                    for (std::size_t i = 0; i < R * n.cols; ++i) pa->grad[i] += n.grad[i];
                if (b.needs_grad)
                    for (std::size_t i = 0; i < R * n.cols; ++i) b.grad[i] -= n.grad[i];
                break;
            }
            case Op::kMul: {
                Node& b = nodes_[n.b];
                const T* av = val_ptr(*pa);
                const T* bv = val_ptr(b);
                if (pa->needs_grad)
                    for (std::size_t i = 0; i < R * n.cols; ++i) pa->grad[i] += n.grad[i] * bv[i];
                if (b.needs_grad)
                    for (std::size_t i = 0; i < R * n.cols; ++i) b.grad[i] += n.grad[i] * av[i];
                break;
            }
            case Op::kDiv: {
                Node& b = nodes_[n.b];
                const T* av = val_ptr(*pa);
                const T* bv = val_ptr(b);
                if (pa->needs_grad)
                    for (std::size_t i = 0; i < R * n.cols; ++i) pa->grad[i] += n.grad[i] / bv[i];
                if (b.needs_grad)
                    for (std::size_t i = 0; i < R * n.cols; ++i)
                        b.grad[i] -= n.grad[i] * av[i] / (bv[i] * bv[i]);
                break;
            }
            case Op::kScale: {
                if (!pa->needs_grad) break;
                const T s = static_cast<T>(n.scalar);
                for (std::size_t i = 0; i < R * n.cols; ++i) pa->grad[i] += s * n.grad[i];
                break;
            }
            case Op::kAddScalar: {
                if (!pa->needs_grad) break;
                for (std::size_t i = 0; i < R * n.cols; ++i) pa->grad[i] += n.grad[i];
                break;
            }
            case Op::kPow: {
                if (!pa->needs_grad) break;
                const T* x = val_ptr(*pa);
                const double p = n.scalar;
                for (std::size_t i = 0; i < R * n.cols; ++i) {
                    double v = static_cast<double>(x[i]);
                    if (v > 0.0) pa->grad[i] += static_cast<T>(p * std::pow(v, p - 1.0)) * n.grad[i];
                }
                break;
            }
            case Op::kClampAbs: {
                if (!pa->needs_grad) break;
                const T* x = val_ptr(*pa);
                const T cap = static_cast<T>(n.scalar);
                for (std::size_t i = 0; i < R * n.cols; ++i) {
                    T v = x[i] < T(0) ? -x[i] : x[i];
                    if (v < cap) pa->grad[i] += (x[i] > T(0) ? n.grad[i] : x[i] < T(0) ? -n.grad[i] : T(0));
                }
                break;
            }
            case Op::kBroadcast: {
                if (!pa->needs_grad) break;
                for (std::size_t i = 0; i < R; ++i) {
                    const T* dy = n.grad.data() + i * n.cols;
                    for (std::size_t j = 0; j < n.cols; ++j) pa->grad[j] += dy[j];
                }
                break;
            }
            case Op::kEmbed: {
                if (!pa->needs_grad) break;
                Node& x = *pa;
                const std::size_t out_len = n.cols / n.channels;
                const std::size_t xrows = runtime_rows(x);
                for (std::size_t i = 0; i < R; ++i) {
                    const T* dy = n.grad.data() + i * n.cols;
                    T* dx = x.grad.data() + (x.batched ? i : (xrows == 1 ? 0 : i % xrows)) * x.cols;
                    const std::size_t off = static_cast<std::size_t>(n.offsets[i]);
                    for (std::size_t j = 0; j < n.channel_map.size(); ++j) {
                        const T* dyc = dy + n.channel_map[j] * out_len;
                        T* dxj = dx + j * n.win;
                        if (!n.wrap) {
                            for (std::size_t t = 0; t < n.win; ++t) dxj[t] += dyc[off + t];
                        } else {
                            for (std::size_t t = 0; t < n.win; ++t) dxj[t] += dyc[(off + t) % out_len];
                        }
                    }
                }
                break;
            }
            case Op::kSlice: {
                if (!pa->needs_grad) break;
                Node& x = *pa;
                const std::size_t in_len = x.cols / n.channels;
                for (std::size_t i = 0; i < R; ++i) {
                    const T* dy = n.grad.data() + i * n.cols;
                    T* dx = x.grad.data() + i * x.cols;
                    const std::size_t off = static_cast<std::size_t>(n.offsets[i]);
                    for (std::size_t c = 0; c < n.channels; ++c) {
                        const T* dyc = dy + c * n.win;
                        T* dxc = dx + c * in_len;
                        if (!n.wrap) {
                            for (std::size_t t = 0; t < n.win; ++t) dxc[off + t] += dyc[t];
                        } else {
                            for (std::size_t t = 0; t < n.win; ++t) dxc[(off + t) % in_len] += dyc[t];
                        }
                    }
                }
                break;
            }
            case Op::kMse: {
                Node& a = *pa;
                Node& b = nodes_[n.b];
                const T* av = val_ptr(a);
                const T* bv = val_ptr(b);
                const std::size_t count = runtime_rows(a) * a.cols;
                const T g = n.grad[0] * static_cast<T>(2.0 / static_cast<double>(count));
                for (std::size_t i = 0; i < count; ++i) {
                    T d = (av[i] - bv[i]) * g;
                    if (a.needs_grad) a.grad[i] += d;
                    if (b.needs_grad) b.grad[i] -= d;
                }
                break;
            }
            case Op::kMae: {
                Node& a = *pa;
                Node& b = nodes_[n.b];
                const T* av = val_ptr(a);
                const T* bv = val_ptr(b);
                const std::size_t count = runtime_rows(a) * a.cols;
                const T g = n.grad[0] / static_cast<T>(count);
                for (std::size_t i = 0; i < count; ++i) {
                    T s = av[i] > bv[i] ? g : av[i] < bv[i] ? -g : T(0);
                    if (a.needs_grad) a.grad[i] += s;
                    if (b.needs_grad) b.grad[i] -= s;
                }
                break;
            }
            case Op::kMeanAbs: {
                if (!pa->needs_grad) break;
                const T* x = val_ptr(*pa);
                const std::size_t count = runtime_rows(*pa) * pa->cols;
                const T g = n.grad[0] / static_cast<T>(count);
                for (std::size_t i = 0; i < count; ++i)
                    pa->grad[i] += x[i] > T(0) ? g : x[i] < T(0) ? -g : T(0);
                break;
            }
            case Op::kMeanAll: {
                if (!pa->needs_grad) break;
                const std::size_t count = runtime_rows(*pa) * pa->cols;
                const T g = n.grad[0] / static_cast<T>(count);
                for (std::size_t i = 0; i < count; ++i) pa->grad[i] += g;
                break;
            }
            case Op::kCosDist: {
                Node& a = *pa;
                Node& b = nodes_[n.b];
                const T* av = val_ptr(a);
                const T* bv = val_ptr(b);
                const std::size_t rows = runtime_rows(a);
                const double g = static_cast<double>(n.grad[0]) / static_cast<double>(rows);
                for (std::size_t r = 0; r < rows; ++r) {
                    const double na = n.scratch[3 * r];
                    const double nb = n.scratch[3 * r + 1];
                    const double dot = n.scratch[3 * r + 2];
                    if (na < kNormEps || nb < kNormEps) continue;
                    const T* ar = av + r * a.cols;
                    const T* br = bv + r * a.cols;
                    const double inv = 1.0 / (na * nb);
                    const double ca = dot / (na * na);
                    const double cb = dot / (nb * nb);
                    for (std::size_t j = 0; j < a.cols; ++j) {
                        if (a.needs_grad)
                            a.grad[r * a.cols + j] -=
                                static_cast<T>(g * inv * (static_cast<double>(br[j]) - ca * ar[j]));
                        if (b.needs_grad)
                            b.grad[r * a.cols + j] -=
                                static_cast<T>(g * inv * (static_cast<double>(ar[j]) - cb * br[j]));
                    }
                }
                break;
            }
            case Op::kL2Mean: {
                if (!pa->needs_grad) break;
                const T* x = val_ptr(*pa);
                const std::size_t rows = runtime_rows(*pa);
                const double g = static_cast<double>(n.grad[0]) / static_cast<double>(rows);
                for (std::size_t r = 0; r < rows; ++r) {
                    const double norm = n.scratch[r];
                    if (norm <= 0.0) continue;
                    const double s = g / norm;
                    for (std::size_t j = 0; j < pa->cols; ++j)
                        pa->grad[r * pa->cols + j] += static_cast<T>(s * x[r * pa->cols + j]);
                }
                break;
            }
            case Op::kRmsRowwise: {
                if (!pa->needs_grad) break;
                const T* x = val_ptr(*pa);
                for (std::size_t r = 0; r < R; ++r) {
                    const double rms = static_cast<double>(n.value[r]);
                    if (rms <= 0.0) continue;
                    const double s = static_cast<double>(n.grad[r]) /
                                     (rms * static_cast<double>(pa->cols));
                    for (std::size_t j = 0; j < pa->cols; ++j)
                        pa->grad[r * pa->cols + j] += static_cast<T>(s * x[r * pa->cols + j]);
                }
                break;
            }
            case Op::kSmooth: {
                if (!pa->needs_grad) break;
                const T* x = val_ptr(*pa);
                const std::size_t rows = runtime_rows(*pa);
                const std::size_t len = pa->cols / n.channels;
                const double g = static_cast<double>(n.grad[0]) /
                                 (static_cast<double>(rows) * static_cast<double>(n.channels) *
                                  static_cast<double>(len - 1));
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < n.channels; ++c) {
                        const T* xc = x + r * pa->cols + c * len;
                        T* dxc = pa->grad.data() + r * pa->cols + c * len;
                        for (std::size_t t = 0; t + 1 < len; ++t) {
                            double d = 2.0 * (static_cast<double>(xc[t + 1]) - xc[t]) * g;
                            dxc[t + 1] += static_cast<T>(d);
                            dxc[t] -= static_cast<T>(d);
                        }
                    }
                }
                break;
            }
        }
    }

    static constexpr double kNormEps = 1e-12;
};

using Graph = GraphT<float>;

} // namespace thh::ad
