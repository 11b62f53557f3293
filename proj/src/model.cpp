#include "banforge/model.hpp"

#include <cmath>
#include <numeric>

#include "banforge/ops.hpp"
#include "banforge/rng.hpp"

namespace banforge {

namespace {

constexpr int kNumStages = 3; // conv families: 3 stages with 2x pooling between

std::size_t flat_input_dim(const ModelSpec& spec) {
    std::size_t d = 1;
    for (std::size_t e : spec.input_shape) d *= e;
    return d;
}

std::size_t dense_transition_channels(std::size_t channels, double compression) {
    auto next = static_cast<std::size_t>(std::floor(static_cast<double>(channels) * compression));
    return next == 0 ? 1 : next;
}

} // namespace

const char* family_name(ModelFamily family) {
    switch (family) {
        case ModelFamily::kMlp: return "mlp";
        case ModelFamily::kResblockNet: return "resblock_net";
        case ModelFamily::kDenseblockNet: return "denseblock_net";
        case ModelFamily::kLstmLm: return "lstm_lm";
    }
    throw ArgumentError("unknown model family");
}

ModelFamily family_from_name(const std::string& name) {
    if (name == "mlp") return ModelFamily::kMlp;
    if (name == "resblock_net") return ModelFamily::kResblockNet;
    if (name == "denseblock_net") return ModelFamily::kDenseblockNet;
    if (name == "lstm_lm") return ModelFamily::kLstmLm;
    throw ArgumentError("unknown model family: " + name);
}

void ModelSpec::validate() const {
    if (depth < 1) throw ArgumentError("model spec: depth must be >= 1");
    if (width < 1) throw ArgumentError("model spec: width must be >= 1");
    if (compression <= 0.0 || compression > 1.0) throw ArgumentError("model spec: compression must lie in (0,1]");
    if (num_classes < 2) throw ArgumentError("model spec: num_classes must be >= 2");
    if (input_shape.empty()) throw ArgumentError("model spec: input_shape must be nonempty");
    for (std::size_t e : input_shape) {
        if (e == 0) throw ArgumentError("model spec: input_shape has a zero extent");
    }
    switch (family) {
        case ModelFamily::kMlp:
            break;
        case ModelFamily::kResblockNet:
        case ModelFamily::kDenseblockNet:
            stage_output_shapes(*this); // throws naming the offending stage
            break;
        case ModelFamily::kLstmLm:
            if (depth != 1) throw ArgumentError("model spec: lstm_lm is single-layer; depth must be 1");
            if (input_shape.size() != 1) throw ArgumentError("model spec: lstm_lm input_shape is {seq_len}");
            break;
    }
}

std::vector<std::vector<std::size_t>> stage_output_shapes(const ModelSpec& spec) {
    if (spec.family != ModelFamily::kResblockNet && spec.family != ModelFamily::kDenseblockNet) {
        return {};
    }
    if (spec.input_shape.size() != 3) {
        throw ArgumentError("model spec: conv families need input_shape {C,H,W}");
    }
    std::size_t h = spec.input_shape[1];
    std::size_t w = spec.input_shape[2];
    std::size_t channels = static_cast<std::size_t>(spec.width);
    std::vector<std::vector<std::size_t>> trace;
    trace.push_back({channels, h, w}); // after stem
    for (int s = 0; s < kNumStages; ++s) {
        if (spec.family == ModelFamily::kDenseblockNet) {
            channels += static_cast<std::size_t>(spec.depth) * static_cast<std::size_t>(spec.width);
        }
        if (s + 1 < kNumStages) {
            if (spec.family == ModelFamily::kDenseblockNet) {
                channels = dense_transition_channels(channels, spec.compression);
            }
            if (h < 2 || w < 2 || h % 2 != 0 || w % 2 != 0) {
                throw ArgumentError("model spec: stage " + std::to_string(s) + " transition cannot pool " +
                                    std::to_string(h) + "x" + std::to_string(w) + " spatial size");
            }
            h /= 2;
            w /= 2;
        }
        trace.push_back({channels, h, w});
    }
    return trace;
}

namespace {

void declare_params(const ModelSpec& spec, ParameterSet& p) {
    const std::size_t width = static_cast<std::size_t>(spec.width);
    const std::size_t classes = static_cast<std::size_t>(spec.num_classes);
    switch (spec.family) {
        case ModelFamily::kMlp: {
            std::size_t in = flat_input_dim(spec);
            for (int i = 0; i < spec.depth; ++i) {
                p.add("fc" + std::to_string(i) + ".w", Tensor({in, width}));
                p.add("fc" + std::to_string(i) + ".b", Tensor({width}));
                in = width;
            }
            p.add("out.w", Tensor({width, classes}));
            p.add("out.b", Tensor({classes}));
            break;
        }
        case ModelFamily::kResblockNet: {
            const std::size_t cin = spec.input_shape[0];
            p.add("stem.w", Tensor({width, cin, 3, 3}));
            p.add("stem.b", Tensor({width}));
            for (int s = 0; s < kNumStages; ++s) {
                for (int d = 0; d < spec.depth; ++d) {
                    const std::string base = "s" + std::to_string(s) + ".b" + std::to_string(d);
                    p.add(base + ".c1.w", Tensor({width, width, 3, 3}));
                    p.add(base + ".c1.b", Tensor({width}));
                    p.add(base + ".c2.w", Tensor({width, width, 3, 3}));
                    p.add(base + ".c2.b", Tensor({width}));
                }
            }
            p.add("out.w", Tensor({width, classes}));
            p.add("out.b", Tensor({classes}));
            break;
        }
        case ModelFamily::kDenseblockNet: {
            const std::size_t cin = spec.input_shape[0];
            p.add("stem.w", Tensor({width, cin, 3, 3}));
            p.add("stem.b", Tensor({width}));
            std::size_t channels = width;
            for (int s = 0; s < kNumStages; ++s) {
                for (int d = 0; d < spec.depth; ++d) {
                    const std::string base = "s" + std::to_string(s) + ".b" + std::to_string(d);
                    p.add(base + ".conv.w", Tensor({width, channels, 3, 3}));
                    p.add(base + ".conv.b", Tensor({width}));
                    channels += width;
                }
                if (s + 1 < kNumStages) {
                    const std::size_t next = dense_transition_channels(channels, spec.compression);
                    const std::string base = "t" + std::to_string(s);
                    p.add(base + ".conv.w", Tensor({next, channels, 1, 1}));
                    p.add(base + ".conv.b", Tensor({next}));
                    channels = next;
                }
            }
            p.add("out.w", Tensor({channels, classes}));
            p.add("out.b", Tensor({classes}));
            break;
        }
        case ModelFamily::kLstmLm: {
            const std::size_t vocab = classes;
            p.add("embed.w", Tensor({vocab, width}));
            p.add("lstm.w_ih", Tensor({width, 4 * width}));
            p.add("lstm.w_hh", Tensor({width, 4 * width}));
            p.add("lstm.b", Tensor({4 * width}));
            p.add("out.w", Tensor({width, vocab}));
            p.add("out.b", Tensor({vocab}));
            break;
        }
    }
}

// Scaled-uniform fan-in: rank-2 weights use dim 0, rank-4 convolutions use
// Cin*kh*kw, biases stay zero. One engine, declaration order.
void init_params(ParameterSet& p, std::uint64_t seed) {
    Rng rng(seed);
    for (std::size_t i = 0; i < p.size(); ++i) {
        Tensor& t = p.value(i);
        if (t.rank() < 2) continue; // bias
        std::size_t fan_in = t.dim(0);
        if (t.rank() == 4) fan_in = t.dim(1) * t.dim(2) * t.dim(3);
        const double limit = std::sqrt(3.0 / static_cast<double>(fan_in));
        for (std::size_t j = 0; j < t.numel(); ++j) {
            t[j] = static_cast<real>(rng.uniform(-limit, limit));
        }
    }
}

struct LeafCtx {
    Graph& g;
    const ParameterSet& params;
    bool track;

    Var operator()(const std::string& name) const {
        return track ? g.param(name, params.at(name)) : g.constant(params.at(name));
    }
};

Var forward_mlp(const ModelSpec& spec, const LeafCtx& leaf, Graph& g, const Tensor& batch) {
    const std::size_t d = flat_input_dim(spec);
    if (batch.numel() % d != 0) {
        throw ArgumentError("mlp forward: batch " + batch.shape_str() + " does not match input dim " +
                            std::to_string(d));
    }
    const std::size_t b = batch.numel() / d;
    if (batch.dim(0) != b) {
        throw ArgumentError("mlp forward: batch " + batch.shape_str() + " does not match input dim " +
                            std::to_string(d));
    }
    Tensor flat({b, d}, std::vector<real>(batch.data(), batch.data() + batch.numel()));
    Var x = g.constant(std::move(flat));
    for (int i = 0; i < spec.depth; ++i) {
        const std::string base = "fc" + std::to_string(i);
        x = ops::relu(ops::add_bias(ops::matmul(x, leaf(base + ".w")), leaf(base + ".b")));
    }
    return ops::add_bias(ops::matmul(x, leaf("out.w")), leaf("out.b"));
}

void check_conv_batch(const ModelSpec& spec, const Tensor& batch) {
    if (batch.rank() != 4 || batch.dim(1) != spec.input_shape[0] || batch.dim(2) != spec.input_shape[1] ||
        batch.dim(3) != spec.input_shape[2]) {
        throw ArgumentError("conv forward: batch " + batch.shape_str() + " does not match input shape");
    }
}

Var forward_resblock(const ModelSpec& spec, const LeafCtx& leaf, Graph& g, const Tensor& batch) {
    check_conv_batch(spec, batch);
    Var x = g.constant(batch);
    x = ops::relu(ops::add_channel_bias(ops::conv2d(x, leaf("stem.w"), 1, 1), leaf("stem.b")));
    for (int s = 0; s < kNumStages; ++s) {
        for (int d = 0; d < spec.depth; ++d) {
            const std::string base = "s" + std::to_string(s) + ".b" + std::to_string(d);
            Var branch = ops::relu(ops::add_channel_bias(ops::conv2d(x, leaf(base + ".c1.w"), 1, 1), leaf(base + ".c1.b")));
            branch = ops::add_channel_bias(ops::conv2d(branch, leaf(base + ".c2.w"), 1, 1), leaf(base + ".c2.b"));
            x = ops::add(x, branch); // block output = input + branch(input)
        }
        if (s + 1 < kNumStages) x = ops::avgpool2d(x, 2, 2);
    }
    Var pooled = ops::global_avgpool(x);
    return ops::add_bias(ops::matmul(pooled, leaf("out.w")), leaf("out.b"));
}

Var forward_denseblock(const ModelSpec& spec, const LeafCtx& leaf, Graph& g, const Tensor& batch) {
    check_conv_batch(spec, batch);
    Var x = g.constant(batch);
    x = ops::relu(ops::add_channel_bias(ops::conv2d(x, leaf("stem.w"), 1, 1), leaf("stem.b")));
    for (int s = 0; s < kNumStages; ++s) {
        for (int d = 0; d < spec.depth; ++d) {
            const std::string base = "s" + std::to_string(s) + ".b" + std::to_string(d);
            Var branch = ops::add_channel_bias(ops::conv2d(ops::relu(x), leaf(base + ".conv.w"), 1, 1),
                                               leaf(base + ".conv.b"));
            x = ops::concat_channels(x, branch); // block output = concat(input, branch(input))
        }
        if (s + 1 < kNumStages) {
            const std::string base = "t" + std::to_string(s);
            x = ops::add_channel_bias(ops::conv2d(x, leaf(base + ".conv.w"), 1, 0), leaf(base + ".conv.b"));
            x = ops::avgpool2d(x, 2, 2);
        }
    }
    Var pooled = ops::global_avgpool(ops::relu(x));
    return ops::add_bias(ops::matmul(pooled, leaf("out.w")), leaf("out.b"));
}

Var forward_lstm(const ModelSpec& spec, const LeafCtx& leaf, Graph& g, const Tensor& batch) {
    if (batch.rank() != 2) {
        throw ArgumentError("lstm forward: batch must be [b, T] token ids, got " + batch.shape_str());
    }
    const std::size_t b = batch.dim(0);
    const std::size_t steps = batch.dim(1);
    const std::size_t hidden = static_cast<std::size_t>(spec.width);
    const std::size_t vocab = static_cast<std::size_t>(spec.num_classes);

    Var embed = leaf("embed.w");
    Var w_ih = leaf("lstm.w_ih");
    Var w_hh = leaf("lstm.w_hh");
    Var bias = leaf("lstm.b");
    Var out_w = leaf("out.w");
    Var out_b = leaf("out.b");

    ops::LstmState state{g.constant(Tensor({b, hidden})), g.constant(Tensor({b, hidden}))};
    std::vector<Var> step_logits;
    step_logits.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) {
        std::vector<int> ids(b);
        for (std::size_t s = 0; s < b; ++s) {
            const real v = batch[s * steps + t];
            const int id = static_cast<int>(std::llround(static_cast<double>(v)));
            if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
                throw ArgumentError("lstm forward: token id " + std::to_string(id) + " out of range");
            }
            ids[s] = id;
        }
        Var x = ops::embedding_lookup(embed, ids);
        state = ops::lstm_step(x, state, w_ih, w_hh, bias);
        step_logits.push_back(ops::add_bias(ops::matmul(state.h, out_w), out_b));
    }
    return ops::concat_rows(step_logits); // time-major: row t*b + s
}

} // namespace

void Model::load_params(const ParameterSet& src) {
    for (std::size_t i = 0; i < src.size(); ++i) {
        params_.set(src.name(i), src.value(i));
    }
}

Var Model::forward(Graph& g, const Tensor& batch, bool track_gradients) const {
    LeafCtx leaf{g, params_, track_gradients};
    switch (spec_.family) {
        case ModelFamily::kMlp: return forward_mlp(spec_, leaf, g, batch);
        case ModelFamily::kResblockNet: return forward_resblock(spec_, leaf, g, batch);
        case ModelFamily::kDenseblockNet: return forward_denseblock(spec_, leaf, g, batch);
        case ModelFamily::kLstmLm: return forward_lstm(spec_, leaf, g, batch);
    }
    throw ArgumentError("unknown model family");
}

Tensor Model::predict_logits(const Tensor& batch) const {
    Graph g;
    return forward(g, batch, /*track_gradients=*/false).value();
}

std::vector<std::string> Model::edge_param_names() const {
    switch (spec_.family) {
        case ModelFamily::kMlp: return {"fc0.w", "fc0.b", "out.w", "out.b"};
        case ModelFamily::kResblockNet:
        case ModelFamily::kDenseblockNet: return {"stem.w", "stem.b", "out.w", "out.b"};
        case ModelFamily::kLstmLm: return {"embed.w", "out.w", "out.b"};
    }
    throw ArgumentError("unknown model family");
}

Model build(const ModelSpec& spec) {
    spec.validate();
    Model m;
    m.spec_ = spec;
    declare_params(spec, m.params_);
    init_params(m.params_, spec.init_seed);
    return m;
}

TeacherSnapshot::TeacherSnapshot(ModelSpec spec, ParameterSet params, int generation) : generation_(generation) {
    spec.validate();
    Model m = build(spec); // declares shapes, then frozen values are loaded
    m.load_params(params);
    model_ = std::move(m);
}

TeacherSnapshot TeacherSnapshot::from_model(const Model& model, int generation) {
    return TeacherSnapshot(model.spec(), model.params(), generation);
}

Tensor TeacherSnapshot::predict_probs(const Tensor& batch, double temperature) const {
    return banforge::softmax(model_.predict_logits(batch), temperature);
}

} // namespace banforge
