#pragma once

#include <iosfwd>
#include <vector>

#include "banforge/graph.hpp"
#include "banforge/rng.hpp"
#include "banforge/tensor.hpp"

namespace banforge {

enum class ObjectiveKind { kCe, kKd, kKdPlusLabel, kCwtm, kDkpp };

const char* objective_name(ObjectiveKind kind);
ObjectiveKind objective_from_name(const std::string& name); // accepts ce|kd|kd+l|cwtm|dkpp

// Selects the training loss. Temperature defaults to 1: distillation works
// without softening the logits, so the targets stay unsoftened unless asked.
struct DistillObjective {
    ObjectiveKind kind = ObjectiveKind::kCe;
    double temperature = 1.0;
    double label_weight = 1.0;        // KD_PLUS_LABEL only
    std::uint64_t permutation_seed = 0; // DKPP only

    void validate() const;
};

// Teacher probabilities plus ground-truth labels for one batch.
struct DistillTargets {
    Tensor probs;             // [b, n], rows sum to 1
    std::vector<int> labels;  // length b, values in [0, n)

    DistillTargets(Tensor probs, std::vector<int> labels); // validates
    std::size_t batch() const { return probs.dim(0); }
    std::size_t classes() const { return probs.dim(1); }
};

// Distillation cross-entropy: mean over the batch of -sum_i p_i log q_i with
// q = softmax(z / T). Differentiable through the student logits only.
double kd_loss(const Tensor& student_logits, const DistillTargets& targets, double temperature = 1.0);

// Per-sample gradient rows d(per-sample kd loss)/dz = (q - p) / T, so the
// batch-mean of the rows equals the autodiff gradient of kd_loss. At the
// default T=1 each row is exactly q - p.
Tensor kd_gradient(const Tensor& student_logits, const DistillTargets& targets, double temperature = 1.0);

double ce_loss(const Tensor& logits, const std::vector<int>& labels);

// Per-sample rows q - onehot(y); identical to kd_gradient with p = onehot(y).
Tensor ce_gradient(const Tensor& logits, const std::vector<int>& labels);

// Split of the T=1 batch gradient into the ground-truth component and the
// dark-knowledge component carried by the wrong outputs. Scattering the
// ground-truth term back into its column and adding the dark term
// reconstructs `total` exactly.
struct GradientDecomposition {
    Tensor total;               // [b,n] = kd_gradient rows at T=1
    Tensor ground_truth_term;   // [b]   = q[s,y_s] - p[s,y_s]
    Tensor dark_knowledge_term; // [b,n], zero in the ground-truth column
    Tensor implied_weights;     // [b]   = p[s,y_s], the teacher-confidence weights
};

GradientDecomposition decompose_batch_gradient(const Tensor& student_logits, const DistillTargets& targets);

// Per-sample importance weights max_i p[s,i] / sum_u max_i p[u,i].
Tensor cwtm_weights(const Tensor& teacher_probs);

// Per-sample rows b * w_s * (q_s - onehot(y_s)): each sample's CE gradient
// rescaled by its normalized teacher-max weight, stated before the 1/b batch
// mean. Uses the ground-truth labels even where the teacher is wrong.
Tensor cwtm_gradient(const Tensor& student_logits, const std::vector<int>& labels, const Tensor& teacher_probs);

// Permuted dark-knowledge targets: the row's max value moves to the
// ground-truth index and the remaining n-1 teacher values are placed on the
// other indices in a uniformly random order. Ties on the max resolve to the
// lowest index. Preserves each row's value multiset bit-exactly.
Tensor dkpp_targets(const Tensor& teacher_probs, const std::vector<int>& labels, Rng& rng);

// Scalar training loss for any objective kind. DKPP materializes its
// permuted targets from `rng` (required). The per-visit rng keying is the
// trainer's job; see Trainer for the (seed, epoch, batch, sample) scheme.
double combined_loss(const DistillObjective& objective, const Tensor& student_logits,
                     const DistillTargets& targets, Rng* rng = nullptr);

// Closed-form per-sample gradient rows of combined_loss; the batch mean of
// the rows equals d combined_loss / d logits.
Tensor objective_gradient(const DistillObjective& objective, const Tensor& student_logits,
                          const DistillTargets& targets, Rng* rng = nullptr);

// Tape-side loss with the same value and gradient as combined_loss, for
// training and for autodiff cross-checks.
Var objective_loss(Graph& g, const DistillObjective& objective, Var student_logits,
                   const DistillTargets& targets, Rng* rng = nullptr);

// Gradient-diagnostic CSV: one row per sample with columns
// sample_index,true_class,teacher_max,teacher_prob_true,gt_term,dark_term_l1,row_sum_check
// where row_sum_check = |sum_i total[s,i]| (every gradient row sums to 0).
void write_decomposition_csv(std::ostream& out, const GradientDecomposition& d, const DistillTargets& targets);

struct DecompositionAggregate {
    double mean_teacher_prob_true = 0; // mean p*
    double teacher_correct_fraction = 0;
    double dark_l1_share = 0;          // ||dark||_1 / ||total||_1
};

DecompositionAggregate aggregate_decomposition(const GradientDecomposition& d, const DistillTargets& targets);

} // namespace banforge
