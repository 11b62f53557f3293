#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "banforge/graph.hpp"
#include "banforge/param_set.hpp"

namespace banforge {

enum class ModelFamily { kMlp, kResblockNet, kDenseblockNet, kLstmLm };

const char* family_name(ModelFamily family);
ModelFamily family_from_name(const std::string& name);

// Declarative model description. Two specs with equal fields produce
// bit-identical initial parameter sets for equal seeds.
struct ModelSpec {
    ModelFamily family = ModelFamily::kMlp;
    int depth = 1;          // hidden layers (MLP) / blocks per stage (conv nets); must be 1 for LSTM_LM
    int width = 16;         // hidden units / stage channels / dense growth / LSTM hidden size
    double compression = 1.0; // channel fraction kept at dense transitions, in (0,1]
    int num_classes = 2;    // class count, or vocab size for LSTM_LM
    std::vector<std::size_t> input_shape; // MLP {d}; conv nets {C,H,W}; LSTM_LM {seq_len}
    std::uint64_t init_seed = 0;

    bool operator==(const ModelSpec&) const = default;

    std::size_t seq_len() const { return input_shape.empty() ? 0 : input_shape[0]; }
    void validate() const; // ArgumentError naming the offending stage/field
};

// Feature-map shape [C,H,W] after the stem and after each stage (dense
// transitions included). Only meaningful for the conv families.
std::vector<std::vector<std::size_t>> stage_output_shapes(const ModelSpec& spec);

// A parameterized differentiable classifier / language model. Copyable;
// forward never mutates the model.
class Model {
public:
    const ModelSpec& spec() const { return spec_; }
    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }

    // Replaces parameter values by name; shapes must match the declaration.
    void load_params(const ParameterSet& src);

    // Records the forward pass. With track_gradients the parameters enter the
    // graph as named leaves; otherwise as constants (teacher mode).
    // Classifiers take [b, ...input_shape] and return [b, num_classes].
    // LSTM_LM takes [b, T] token ids and returns [T*b, vocab] step logits in
    // time-major row order (row t*b + s holds sample s at step t).
    Var forward(Graph& g, const Tensor& batch, bool track_gradients = true) const;

    // No-graph convenience forward.
    Tensor predict_logits(const Tensor& batch) const;

    std::uint64_t checksum() const { return params_.checksum(); }

    // Parameter names of the input-side and output-side layers, used by the
    // optional share-and-freeze distillation mode.
    std::vector<std::string> edge_param_names() const;

private:
    friend Model build(const ModelSpec& spec);
    ModelSpec spec_;
    ParameterSet params_;
};

// Constructs a model with deterministic scaled-uniform fan-in initialization:
// weights ~ U(-sqrt(3/fan_in), sqrt(3/fan_in)) drawn in declaration order
// from a single engine seeded with spec.init_seed; biases start at zero.
Model build(const ModelSpec& spec);

// Frozen converged generation. Forward passes never record gradients and the
// snapshot is immutable, so it is safe to share across threads.
class TeacherSnapshot {
public:
    TeacherSnapshot(ModelSpec spec, ParameterSet params, int generation);
    static TeacherSnapshot from_model(const Model& model, int generation);

    const ModelSpec& spec() const { return model_.spec(); }
    const ParameterSet& params() const { return model_.params(); }
    int generation() const { return generation_; }

    Tensor predict_logits(const Tensor& batch) const { return model_.predict_logits(batch); }
    Tensor predict_probs(const Tensor& batch, double temperature = 1.0) const;

    std::uint64_t checksum() const { return model_.checksum(); }

private:
    Model model_;
    int generation_;
};

} // namespace banforge
