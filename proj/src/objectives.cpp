#include "banforge/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "banforge/ops.hpp"

namespace banforge {

namespace {

constexpr double kRowSumTolerance = 1e-9;

void check_labels(const std::vector<int>& labels, std::size_t batch, std::size_t classes) {
    if (labels.size() != batch) {
        throw ArgumentError("labels length " + std::to_string(labels.size()) + " != batch " + std::to_string(batch));
    }
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= classes) {
            throw ArgumentError("label " + std::to_string(y) + " out of range [0," + std::to_string(classes) + ")");
        }
    }
}

void check_targets_match(const Tensor& logits, const DistillTargets& targets, const char* op) {
    if (logits.rank() != 2 || !logits.same_shape(targets.probs)) {
        throw ArgumentError(std::string(op) + ": logits " + logits.shape_str() + " vs targets " +
                            targets.probs.shape_str());
    }
}

Tensor onehot_rows(const std::vector<int>& labels, std::size_t classes) {
    Tensor m({labels.size(), classes});
    for (std::size_t s = 0; s < labels.size(); ++s) m[s * classes + static_cast<std::size_t>(labels[s])] = real(1);
    return m;
}

// Index of the row max; ties resolve to the lowest index.
std::size_t row_argmax(const real* row, std::size_t n) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i) {
        if (row[i] > row[best]) best = i;
    }
    return best;
}

// -sum(M .* log_softmax(z, T)) / b on the tape; the shared form behind every
// objective kind (M is onehot, teacher probs, weighted onehot, or permuted).
Var soft_ce(Var logits, Tensor target_matrix, double temperature) {
    const std::size_t batch = target_matrix.dim(0);
    Var logq = ops::log_softmax_rows(logits, temperature);
    Var weighted = ops::mul_const(logq, std::move(target_matrix));
    return ops::scale(ops::sum_all(weighted), -1.0 / static_cast<double>(batch));
}

double soft_ce_value(const Tensor& logits, const Tensor& target_matrix, double temperature) {
    const Tensor logq = log_softmax(logits, temperature);
    double acc = 0;
    for (std::size_t i = 0; i < logq.numel(); ++i) {
        acc += static_cast<double>(target_matrix[i]) * static_cast<double>(logq[i]);
    }
    return -acc / static_cast<double>(target_matrix.dim(0));
}

// Per-sample rows (softmax(z/T) - M_s) / T for a row-wise target matrix whose
// rows each sum to w_s (1 for distributions). The general gradient of
// soft_ce: d/dz_i of -sum_j M_j log q_j = ((sum_j M_j) q_i - M_i) / T.
Tensor soft_ce_gradient_rows(const Tensor& logits, const Tensor& target_matrix, double temperature) {
    const Tensor q = softmax(logits, temperature);
    const std::size_t batch = logits.dim(0), classes = logits.dim(1);
    Tensor rows(logits.shape());
    for (std::size_t s = 0; s < batch; ++s) {
        const real* qrow = q.data() + s * classes;
        const real* mrow = target_matrix.data() + s * classes;
        real* out = rows.data() + s * classes;
        real msum = 0;
        for (std::size_t i = 0; i < classes; ++i) msum += mrow[i];
        for (std::size_t i = 0; i < classes; ++i) {
            out[i] = (msum * qrow[i] - mrow[i]) / static_cast<real>(temperature);
        }
    }
    return rows;
}

Tensor cwtm_target_matrix(const std::vector<int>& labels, const Tensor& teacher_probs) {
    const Tensor w = cwtm_weights(teacher_probs);
    const std::size_t batch = teacher_probs.dim(0), classes = teacher_probs.dim(1);
    Tensor m({batch, classes});
    for (std::size_t s = 0; s < batch; ++s) {
        m[s * classes + static_cast<std::size_t>(labels[s])] = w[s] * static_cast<real>(batch);
    }
    return m;
}

Rng& require_rng(const DistillObjective& objective, Rng* rng) {
    if (rng == nullptr) throw ArgumentError("DKPP objective needs an rng state");
    (void)objective;
    return *rng;
}

} // namespace

const char* objective_name(ObjectiveKind kind) {
    switch (kind) {
        case ObjectiveKind::kCe: return "ce";
        case ObjectiveKind::kKd: return "kd";
        case ObjectiveKind::kKdPlusLabel: return "kd+l";
        case ObjectiveKind::kCwtm: return "cwtm";
        case ObjectiveKind::kDkpp: return "dkpp";
    }
    throw ArgumentError("unknown objective kind");
}

ObjectiveKind objective_from_name(const std::string& name) {
    if (name == "ce") return ObjectiveKind::kCe;
    if (name == "kd") return ObjectiveKind::kKd;
    if (name == "kd+l" || name == "kd_plus_label" || name == "kdl") return ObjectiveKind::kKdPlusLabel;
    if (name == "cwtm") return ObjectiveKind::kCwtm;
    if (name == "dkpp") return ObjectiveKind::kDkpp;
    throw ArgumentError("unknown objective: " + name + " (expected ce|kd|kd+l|cwtm|dkpp)");
}

void DistillObjective::validate() const {
    if (temperature <= 0.0) throw ArgumentError("objective temperature must be positive");
    if (label_weight < 0.0) throw ArgumentError("objective label_weight must be nonnegative");
}

DistillTargets::DistillTargets(Tensor p, std::vector<int> y) : probs(std::move(p)), labels(std::move(y)) {
    if (probs.rank() != 2) throw ArgumentError("targets probs must be [b,n], got " + probs.shape_str());
    const std::size_t b = probs.dim(0), n = probs.dim(1);
    check_labels(labels, b, n);
    for (std::size_t s = 0; s < b; ++s) {
        real sum = 0;
        for (std::size_t i = 0; i < n; ++i) sum += probs[s * n + i];
        if (std::abs(static_cast<double>(sum) - 1.0) > kRowSumTolerance) {
            std::ostringstream os;
            os << "targets row " << s << " sums to " << static_cast<double>(sum) << ", not 1";
            throw ArgumentError(os.str());
        }
    }
}

double kd_loss(const Tensor& student_logits, const DistillTargets& targets, double temperature) {
    check_targets_match(student_logits, targets, "kd_loss");
    return soft_ce_value(student_logits, targets.probs, temperature);
}

Tensor kd_gradient(const Tensor& student_logits, const DistillTargets& targets, double temperature) {
    check_targets_match(student_logits, targets, "kd_gradient");
    return soft_ce_gradient_rows(student_logits, targets.probs, temperature);
}

double ce_loss(const Tensor& logits, const std::vector<int>& labels) {
    check_labels(labels, logits.dim(0), logits.dim(1));
    return soft_ce_value(logits, onehot_rows(labels, logits.dim(1)), 1.0);
}

Tensor ce_gradient(const Tensor& logits, const std::vector<int>& labels) {
    check_labels(labels, logits.dim(0), logits.dim(1));
    return soft_ce_gradient_rows(logits, onehot_rows(labels, logits.dim(1)), 1.0);
}

GradientDecomposition decompose_batch_gradient(const Tensor& student_logits, const DistillTargets& targets) {
    check_targets_match(student_logits, targets, "decompose_batch_gradient");
    const std::size_t b = targets.batch(), n = targets.classes();

    GradientDecomposition d;
    d.total = kd_gradient(student_logits, targets, 1.0);
    d.ground_truth_term = Tensor({b});
    d.dark_knowledge_term = Tensor({b, n});
    d.implied_weights = Tensor({b});
    for (std::size_t s = 0; s < b; ++s) {
        const auto y = static_cast<std::size_t>(targets.labels[s]);
        d.ground_truth_term[s] = d.total[s * n + y];
        d.implied_weights[s] = targets.probs[s * n + y];
        for (std::size_t i = 0; i < n; ++i) {
            d.dark_knowledge_term[s * n + i] = (i == y) ? real(0) : d.total[s * n + i];
        }
    }
    return d;
}

Tensor cwtm_weights(const Tensor& teacher_probs) {
    if (teacher_probs.rank() != 2) {
        throw ArgumentError("cwtm_weights expects [b,n] probs, got " + teacher_probs.shape_str());
    }
    const std::size_t b = teacher_probs.dim(0), n = teacher_probs.dim(1);
    Tensor w({b});
    real denom = 0;
    for (std::size_t s = 0; s < b; ++s) {
        const real* row = teacher_probs.data() + s * n;
        w[s] = row[row_argmax(row, n)];
        denom += w[s];
    }
    if (denom <= real(0)) throw ArgumentError("cwtm_weights: teacher rows have no positive mass");
    for (std::size_t s = 0; s < b; ++s) w[s] /= denom;
    return w;
}

Tensor cwtm_gradient(const Tensor& student_logits, const std::vector<int>& labels, const Tensor& teacher_probs) {
    if (!student_logits.same_shape(teacher_probs)) {
        throw ArgumentError("cwtm_gradient: logits " + student_logits.shape_str() + " vs teacher probs " +
                            teacher_probs.shape_str());
    }
    check_labels(labels, student_logits.dim(0), student_logits.dim(1));
    return soft_ce_gradient_rows(student_logits, cwtm_target_matrix(labels, teacher_probs), 1.0);
}

Tensor dkpp_targets(const Tensor& teacher_probs, const std::vector<int>& labels, Rng& rng) {
    if (teacher_probs.rank() != 2) {
        throw ArgumentError("dkpp_targets expects [b,n] probs, got " + teacher_probs.shape_str());
    }
    const std::size_t b = teacher_probs.dim(0), n = teacher_probs.dim(1);
    if (n < 2) throw ArgumentError("dkpp_targets needs at least 2 classes");
    check_labels(labels, b, n);

    Tensor out({b, n});
    std::vector<real> rest;
    rest.reserve(n - 1);
    for (std::size_t s = 0; s < b; ++s) {
        const real* row = teacher_probs.data() + s * n;
        real* dst = out.data() + s * n;
        const std::size_t max_pos = row_argmax(row, n);
        const auto y = static_cast<std::size_t>(labels[s]);

        rest.clear();
        for (std::size_t i = 0; i < n; ++i) {
            if (i != max_pos) rest.push_back(row[i]);
        }
        rng.shuffle(rest);

        dst[y] = row[max_pos];
        std::size_t k = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (i != y) dst[i] = rest[k++];
        }
    }
    return out;
}

double combined_loss(const DistillObjective& objective, const Tensor& student_logits,
                     const DistillTargets& targets, Rng* rng) {
    objective.validate();
    check_targets_match(student_logits, targets, "combined_loss");
    switch (objective.kind) {
        case ObjectiveKind::kCe:
            return ce_loss(student_logits, targets.labels);
        case ObjectiveKind::kKd:
            return kd_loss(student_logits, targets, objective.temperature);
        case ObjectiveKind::kKdPlusLabel:
            return kd_loss(student_logits, targets, objective.temperature) +
                   objective.label_weight * ce_loss(student_logits, targets.labels);
        case ObjectiveKind::kCwtm:
            return soft_ce_value(student_logits, cwtm_target_matrix(targets.labels, targets.probs), 1.0);
        case ObjectiveKind::kDkpp: {
            Tensor permuted = dkpp_targets(targets.probs, targets.labels, require_rng(objective, rng));
            return kd_loss(student_logits, DistillTargets(std::move(permuted), targets.labels),
                           objective.temperature);
        }
    }
    throw ArgumentError("unknown objective kind");
}

Tensor objective_gradient(const DistillObjective& objective, const Tensor& student_logits,
                          const DistillTargets& targets, Rng* rng) {
    objective.validate();
    check_targets_match(student_logits, targets, "objective_gradient");
    switch (objective.kind) {
        case ObjectiveKind::kCe:
            return ce_gradient(student_logits, targets.labels);
        case ObjectiveKind::kKd:
            return kd_gradient(student_logits, targets, objective.temperature);
        case ObjectiveKind::kKdPlusLabel: {
            Tensor rows = kd_gradient(student_logits, targets, objective.temperature);
            const Tensor label_rows = ce_gradient(student_logits, targets.labels);
            for (std::size_t i = 0; i < rows.numel(); ++i) {
                rows[i] += static_cast<real>(objective.label_weight) * label_rows[i];
            }
            return rows;
        }
        case ObjectiveKind::kCwtm:
            return cwtm_gradient(student_logits, targets.labels, targets.probs);
        case ObjectiveKind::kDkpp: {
            Tensor permuted = dkpp_targets(targets.probs, targets.labels, require_rng(objective, rng));
            return kd_gradient(student_logits, DistillTargets(std::move(permuted), targets.labels),
                               objective.temperature);
        }
    }
    throw ArgumentError("unknown objective kind");
}

Var objective_loss(Graph& g, const DistillObjective& objective, Var student_logits,
                   const DistillTargets& targets, Rng* rng) {
    objective.validate();
    if (student_logits.graph != &g) throw ArgumentError("objective_loss: logits live on a different graph");
    check_targets_match(student_logits.value(), targets, "objective_loss");
    const std::size_t n = targets.classes();
    switch (objective.kind) {
        case ObjectiveKind::kCe:
            return soft_ce(student_logits, onehot_rows(targets.labels, n), 1.0);
        case ObjectiveKind::kKd:
            return soft_ce(student_logits, targets.probs, objective.temperature);
        case ObjectiveKind::kKdPlusLabel: {
            Var kd = soft_ce(student_logits, targets.probs, objective.temperature);
            Var label = soft_ce(student_logits, onehot_rows(targets.labels, n), 1.0);
            return ops::add(kd, ops::scale(label, objective.label_weight));
        }
        case ObjectiveKind::kCwtm:
            return soft_ce(student_logits, cwtm_target_matrix(targets.labels, targets.probs), 1.0);
        case ObjectiveKind::kDkpp: {
            Tensor permuted = dkpp_targets(targets.probs, targets.labels, require_rng(objective, rng));
            return soft_ce(student_logits, std::move(permuted), objective.temperature);
        }
    }
    throw ArgumentError("unknown objective kind");
}

void write_decomposition_csv(std::ostream& out, const GradientDecomposition& d, const DistillTargets& targets) {
    const std::size_t b = targets.batch(), n = targets.classes();
    out << "sample_index,true_class,teacher_max,teacher_prob_true,gt_term,dark_term_l1,row_sum_check\n";
    std::ostringstream row;
    row.precision(17);
    for (std::size_t s = 0; s < b; ++s) {
        const real* p = targets.probs.data() + s * n;
        const real teacher_max = p[row_argmax(p, n)];
        double dark_l1 = 0;
        double row_sum = 0;
        for (std::size_t i = 0; i < n; ++i) {
            dark_l1 += std::abs(static_cast<double>(d.dark_knowledge_term[s * n + i]));
            row_sum += static_cast<double>(d.total[s * n + i]);
        }
        row.str("");
        row << s << ',' << targets.labels[s] << ',' << static_cast<double>(teacher_max) << ','
            << static_cast<double>(d.implied_weights[s]) << ',' << static_cast<double>(d.ground_truth_term[s]) << ','
            << dark_l1 << ',' << std::abs(row_sum) << '\n';
        out << row.str();
    }
}

DecompositionAggregate aggregate_decomposition(const GradientDecomposition& d, const DistillTargets& targets) {
    const std::size_t b = targets.batch(), n = targets.classes();
    DecompositionAggregate agg;
    double total_l1 = 0, dark_l1 = 0;
    for (std::size_t s = 0; s < b; ++s) {
        const real* p = targets.probs.data() + s * n;
        agg.mean_teacher_prob_true += static_cast<double>(d.implied_weights[s]);
        if (row_argmax(p, n) == static_cast<std::size_t>(targets.labels[s])) {
            agg.teacher_correct_fraction += 1.0;
        }
        for (std::size_t i = 0; i < n; ++i) {
            total_l1 += std::abs(static_cast<double>(d.total[s * n + i]));
            dark_l1 += std::abs(static_cast<double>(d.dark_knowledge_term[s * n + i]));
        }
    }
    agg.mean_teacher_prob_true /= static_cast<double>(b);
    agg.teacher_correct_fraction /= static_cast<double>(b);
    agg.dark_l1_share = total_l1 > 0 ? dark_l1 / total_l1 : 0.0;
    return agg;
}

} // namespace banforge
