#include "stablept/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <Eigen/Cholesky>
#include <nlohmann/json.hpp>

namespace stablept {

AccuracyStats accuracy_stats(const std::vector<double>& accuracies) {
    if (accuracies.size() < 2) {
        throw ContractError("accuracy_stats: need at least 2 runs, got " +
                            std::to_string(accuracies.size()));
    }
    const double n = static_cast<double>(accuracies.size());
    double mean = 0.0;
    for (double a : accuracies) mean += a;
    mean /= n;
    double ss = 0.0;
    for (double a : accuracies) ss += (a - mean) * (a - mean);
    return {mean, std::sqrt(ss / (n - 1.0))};
}

double silhouette(const MatrixRM& embeddings, const std::vector<Index>& labels) {
    const Index n = embeddings.rows();
    if (n < 2) throw ContractError("silhouette: need at least 2 points");
    if (static_cast<Index>(labels.size()) != n) {
        throw ShapeError("silhouette: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " points");
    }
    std::set<Index> classes(labels.begin(), labels.end());
    if (classes.size() < 2) throw ContractError("silhouette: need at least 2 classes");

    std::map<Index, Index> class_sizes;
    for (Index y : labels) ++class_sizes[y];

    double total = 0.0;
    for (Index i = 0; i < n; ++i) {
        const Index yi = labels[static_cast<std::size_t>(i)];
        if (class_sizes[yi] < 2) continue;  // singleton scores 0
        std::map<Index, double> sums;
        for (Index j = 0; j < n; ++j) {
            if (j == i) continue;
            const double dist = (embeddings.row(i) - embeddings.row(j)).norm();
            sums[labels[static_cast<std::size_t>(j)]] += dist;
        }
        const double a = sums[yi] / static_cast<double>(class_sizes[yi] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (const auto& [cls, total_dist] : sums) {
            if (cls == yi) continue;
            b = std::min(b, total_dist / static_cast<double>(class_sizes[cls]));
        }
        const double denom = std::max(a, b);
        total += denom > 0.0 ? (b - a) / denom : 0.0;
    }
    return total / static_cast<double>(n);
}

namespace {

struct GaussianFit {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;  // shrunk
};

GaussianFit fit_gaussian(const MatrixRM& x) {
    GaussianFit fit;
    const Index n = x.rows(), d = x.cols();
    fit.mean = x.colwise().mean().transpose();
    Eigen::MatrixXd centered = x.rowwise() - fit.mean.transpose();
    fit.cov = centered.transpose() * centered / static_cast<double>(n);
    const double lambda = 1e-3 * fit.cov.trace() / static_cast<double>(d);
    fit.cov += lambda * Eigen::MatrixXd::Identity(d, d);
    return fit;
}

double kl_between(const GaussianFit& p, const GaussianFit& q) {
    const Index d = p.mean.size();
    Eigen::LLT<Eigen::MatrixXd> llt_q(q.cov);
    Eigen::LLT<Eigen::MatrixXd> llt_p(p.cov);
    if (llt_q.info() != Eigen::Success || llt_p.info() != Eigen::Success) {
        throw NumericError("kl_gaussian: covariance is singular after shrinkage");
    }
    const Eigen::MatrixXd q_inv_p = llt_q.solve(p.cov);
    const Eigen::VectorXd diff = q.mean - p.mean;
    auto log_det = [](const Eigen::LLT<Eigen::MatrixXd>& llt) {
        return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    };
    const double maha = diff.dot(llt_q.solve(diff));
    return 0.5 * (q_inv_p.trace() + maha - static_cast<double>(d) + log_det(llt_q) - log_det(llt_p));
}

}  // namespace

double kl_gaussian(const MatrixRM& embeddings, const std::vector<Index>& labels) {
    const Index n = embeddings.rows();
    if (static_cast<Index>(labels.size()) != n) {
        throw ShapeError("kl_gaussian: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " points");
    }
    std::vector<Index> rows0, rows1;
    for (Index i = 0; i < n; ++i) {
        (labels[static_cast<std::size_t>(i)] == 0 ? rows0 : rows1).push_back(i);
    }
    if (rows0.empty() || rows1.empty()) {
        throw ContractError("kl_gaussian: both classes need samples");
    }
    auto take = [&](const std::vector<Index>& rows) {
        MatrixRM m(static_cast<Index>(rows.size()), embeddings.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Index>(i)) = embeddings.row(rows[i]);
        return m;
    };
    const GaussianFit p = fit_gaussian(take(rows0));
    const GaussianFit q = fit_gaussian(take(rows1));
    return 0.5 * (kl_between(p, q) + kl_between(q, p));
}

double mmd_rbf(const MatrixRM& class0, const MatrixRM& class1) {
    const Index m = class0.rows(), n = class1.rows();
    if (m == 0 || n == 0) throw ContractError("mmd_rbf: both sets must be nonempty");
    MatrixRM pooled(m + n, class0.cols());
    pooled.topRows(m) = class0;
    pooled.bottomRows(n) = class1;
    std::vector<double> dists;
    dists.reserve(static_cast<std::size_t>((m + n) * (m + n - 1) / 2));
    for (Index i = 0; i < m + n; ++i) {
        for (Index j = i + 1; j < m + n; ++j) {
            dists.push_back((pooled.row(i) - pooled.row(j)).norm());
        }
    }
    double bandwidth = 1.0;
    if (!dists.empty()) {
        std::sort(dists.begin(), dists.end());
        const std::size_t mid = dists.size() / 2;
        const double median = dists.size() % 2 ? dists[mid] : 0.5 * (dists[mid - 1] + dists[mid]);
        if (median > 0.0) bandwidth = median;
    }
    return mmd_rbf(class0, class1, bandwidth);
}

double mmd_rbf(const MatrixRM& class0, const MatrixRM& class1, double bandwidth) {
    const Index m = class0.rows(), n = class1.rows();
    if (m == 0 || n == 0) throw ContractError("mmd_rbf: both sets must be nonempty");
    if (bandwidth <= 0.0) throw ContractError("mmd_rbf: bandwidth must be positive");
    const double gamma = 1.0 / (2.0 * bandwidth * bandwidth);
    auto kernel_sum = [gamma](const MatrixRM& a, const MatrixRM& b) {
        double s = 0.0;
        for (Index i = 0; i < a.rows(); ++i) {
            for (Index j = 0; j < b.rows(); ++j) {
                s += std::exp(-gamma * (a.row(i) - b.row(j)).squaredNorm());
            }
        }
        return s;
    };
    const double xx = kernel_sum(class0, class0) / static_cast<double>(m * m);
    const double yy = kernel_sum(class1, class1) / static_cast<double>(n * n);
    const double xy = kernel_sum(class0, class1) / static_cast<double>(m * n);
    return std::max(0.0, xx + yy - 2.0 * xy);
}

EmbeddingDump collect_embeddings(const ModelState& state, const EncodedSplit& split,
                                 Variant variant, const std::string& phase, std::uint64_t seed) {
    if (variant == Variant::WithoutCL) {
        throw ContractError("collect_embeddings: the wo_cl variant has no CL head");
    }
    if (split.size() == 0) throw ContractError("collect_embeddings: empty split");
    NoTapeScope no_tape;
    const Index n = static_cast<Index>(split.size());
    const Index d = state.config.embed_dim;
    EmbeddingDump dump;
    dump.embeddings.resize(n, d);
    dump.labels = split.labels;
    dump.phase = phase;
    dump.seed = seed;
    constexpr Index kChunk = 64;
    for (Index start = 0; start < n; start += kChunk) {
        const Index stop = std::min(n, start + kChunk);
        std::vector<Index> idxs(static_cast<std::size_t>(stop - start));
        std::iota(idxs.begin(), idxs.end(), start);
        BatchView batch = make_batch(split, idxs);
        ForwardOut out = forward(state, batch.enc, variant);
        ConstMatMap pooled(out.pooled_prompt->values().data(), stop - start, d);
        dump.embeddings.middleRows(start, stop - start) = pooled;
    }
    return dump;
}

void write_embedding_csv(const EmbeddingDump& dump, const std::string& run_id,
                         const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ContractError("write_embedding_csv: cannot open " + path);
    out << "run_id,phase,label";
    for (Index j = 0; j < dump.embeddings.cols(); ++j) out << ",dim_" << j;
    out << "\n";
    char buf[40];
    for (Index i = 0; i < dump.embeddings.rows(); ++i) {
        out << run_id << "," << dump.phase << "," << dump.labels[static_cast<std::size_t>(i)];
        for (Index j = 0; j < dump.embeddings.cols(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", dump.embeddings(i, j));
            out << "," << buf;
        }
        out << "\n";
    }
}

EmbeddingDump read_embedding_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ContractError("read_embedding_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw ContractError("read_embedding_csv: empty file " + path);
    const Index dims = static_cast<Index>(std::count(line.begin(), line.end(), ',')) - 2;
    EmbeddingDump dump;
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::getline(ss, field, ',');  // run_id
        std::getline(ss, field, ',');
        dump.phase = field;
        std::getline(ss, field, ',');
        dump.labels.push_back(static_cast<Index>(std::stoll(field)));
        std::vector<double> row;
        while (std::getline(ss, field, ',')) row.push_back(std::stod(field));
        if (static_cast<Index>(row.size()) != dims) {
            throw ContractError("read_embedding_csv: ragged row in " + path);
        }
        rows.push_back(std::move(row));
    }
    dump.embeddings.resize(static_cast<Index>(rows.size()), dims);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (Index j = 0; j < dims; ++j) dump.embeddings(static_cast<Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
    }
    return dump;
}

ClusterMetrics cluster_metrics(const MatrixRM& embeddings, const std::vector<Index>& labels) {
    ClusterMetrics m;
    m.sc = silhouette(embeddings, labels);
    m.kl = kl_gaussian(embeddings, labels);
    std::vector<Index> rows0, rows1;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        (labels[i] == 0 ? rows0 : rows1).push_back(static_cast<Index>(i));
    }
    auto take = [&](const std::vector<Index>& rows) {
        MatrixRM out(static_cast<Index>(rows.size()), embeddings.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = embeddings.row(rows[i]);
        return out;
    };
    m.mmd = mmd_rbf(take(rows0), take(rows1));
    return m;
}

EmbeddingDump export_embeddings(const ModelState& state, const EncodedSplit& split, Variant variant,
                                const std::string& phase, std::uint64_t seed,
                                const std::string& run_id, const std::string& path) {
    EmbeddingDump dump = collect_embeddings(state, split, variant, phase, seed);
    write_embedding_csv(dump, run_id, path);
    return dump;
}

void write_metrics_json(const ClusterMetrics& m, const std::string& phase, std::uint64_t seed,
                        const std::string& path) {
    nlohmann::json j{{"sc", m.sc}, {"kl", m.kl}, {"mmd", m.mmd}, {"phase", phase}, {"seed", seed}};
    std::ofstream out(path);
    if (!out) throw ContractError("write_metrics_json: cannot open " + path);
    out << j.dump(2) << "\n";
}

}  // namespace stablept
