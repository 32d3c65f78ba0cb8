#pragma once

#include <string>
#include <vector>

#include "stablept/model.hpp"
#include "stablept/trainer.hpp"

namespace stablept {

struct AccuracyStats {
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation, n-1 denominator
};

AccuracyStats accuracy_stats(const std::vector<double>& accuracies);

// Mean silhouette over points with Euclidean distance; a = mean intra-class
// distance (self excluded), b = min over other classes of mean distance;
// singleton-class points and a = b = 0 score 0.
double silhouette(const MatrixRM& embeddings, const std::vector<Index>& labels);

// Symmetrized KL between per-class Gaussian fits (ML mean/covariance with
// lambda*I shrinkage, lambda = 1e-3 trace/d).
double kl_gaussian(const MatrixRM& embeddings, const std::vector<Index>& labels);

// Biased V-statistic MMD^2 with an RBF kernel exp(-r^2 / (2 h^2)); h is the
// median pairwise distance over the pooled set (1 when the median is 0).
double mmd_rbf(const MatrixRM& class0, const MatrixRM& class1);
// Same statistic at a caller-fixed bandwidth.
double mmd_rbf(const MatrixRM& class0, const MatrixRM& class1, double bandwidth);

struct EmbeddingDump {
    MatrixRM embeddings;  // one row of pooled prompt state per example
    std::vector<Index> labels;
    std::string phase;  // before_tuning | after_tuning
    std::uint64_t seed = 0;
};

// Pooled prompt embeddings for a whole split under the given variant.
EmbeddingDump collect_embeddings(const ModelState& state, const EncodedSplit& split,
                                 Variant variant, const std::string& phase, std::uint64_t seed);

// CSV with header run_id,phase,label,dim_0..dim_{d-1}; values at full
// round-trip precision.
void write_embedding_csv(const EmbeddingDump& dump, const std::string& run_id,
                         const std::string& path);
EmbeddingDump read_embedding_csv(const std::string& path);

// collect + write in one step
EmbeddingDump export_embeddings(const ModelState& state, const EncodedSplit& split, Variant variant,
                                const std::string& phase, std::uint64_t seed,
                                const std::string& run_id, const std::string& path);

struct ClusterMetrics {
    double sc = 0.0;
    double kl = 0.0;
    double mmd = 0.0;
};

ClusterMetrics cluster_metrics(const MatrixRM& embeddings, const std::vector<Index>& labels);

// {"sc":..., "kl":..., "mmd":..., "phase":..., "seed":...}
void write_metrics_json(const ClusterMetrics& m, const std::string& phase, std::uint64_t seed,
                        const std::string& path);

}  // namespace stablept
