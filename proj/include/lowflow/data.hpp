// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "lowflow/fmtio.hpp"
#include "lowflow/linalg.hpp"
#include "lowflow/rng.hpp"

namespace lowflow {

// How a dataset was generated; stored alongside the samples so a run can be
// reproduced from the files alone.
struct DatasetSpec {
    std::string kind;  // "gaussian-mixture" | "two-moons"
    std::size_t n = 0;
    std::size_t dim = 0;
    std::size_t k = 0;  // number of classes
    std::vector<std::size_t> sem_dims;
    double mean_scale = 0.0;
    double within_std = 0.0;
    std::uint64_t seed = 0;
};

struct SyntheticDataset {
    Matrix x;                 // n x dim
    std::vector<int> labels;  // values in [0, k)
    Matrix class_means;       // k x dim
    DatasetSpec spec;
    double delta0 = 0.0;     // smallest pairwise class-mean distance
    double delta_max = 0.0;  // largest pairwise class-mean distance
};

namespace detail {

inline void pairwise_mean_distances(const Matrix& means, double& d_min, double& d_max) {
    d_min = std::numeric_limits<double>::infinity();
    d_max = 0.0;
    for (std::size_t i = 0; i < means.rows(); ++i)
        for (std::size_t j = i + 1; j < means.rows(); ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < means.cols(); ++c) {
                const double d = means(i, c) - means(j, c);
                s += d * d;
            }
            const double dist = std::sqrt(s);
            d_min = std::min(d_min, dist);
            d_max = std::max(d_max, dist);
        }
}

}  // namespace detail

// k Gaussian classes whose means are the vertices of a regular simplex,
// scaled to norm mean_scale and embedded in the coordinates listed in
// sem_dims; every other coordinate of every mean is zero. Sample i belongs
// to class i % k and adds within_std * N(0, I_dim) isotropic noise across
// all dim coordinates, so the class signal lives only in the sem_dims
// subspace while the noise does not. Row i draws from substream
// (seed, "data", i): the sample at a row never depends on n.
inline SyntheticDataset gaussian_mixture(std::size_t dim, std::size_t k,
                                         std::vector<std::size_t> sem_dims, double mean_scale,
                                         double within_std, std::size_t n,
                                         std::uint64_t seed) {
    if (k < 2) throw UsageError("gaussian_mixture: need at least 2 classes");
    if (dim == 0 || n == 0) throw UsageError("gaussian_mixture: dim and n must be positive");
    if (sem_dims.empty()) throw UsageError("gaussian_mixture: sem_dims must be non-empty");
    for (std::size_t d : sem_dims)
        if (d >= dim) throw UsageError("gaussian_mixture: sem_dims entry out of range");
    {
        auto sorted = sem_dims;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
            throw UsageError("gaussian_mixture: sem_dims entries must be distinct");
    }
    if (k - 1 > sem_dims.size())
        throw UsageError("gaussian_mixture: " + std::to_string(k) +
                         " simplex vertices need at least " + std::to_string(k - 1) +
                         " semantic dimensions, got " + std::to_string(sem_dims.size()));
    if (!(mean_scale > 0.0)) throw UsageError("gaussian_mixture: mean_scale must be positive");
    if (!(within_std >= 0.0)) throw UsageError("gaussian_mixture: within_std must be >= 0");

    // Helmert rows give an orthonormal basis of the sum-zero hyperplane in
    // R^k; the centered unit vectors e_i - 1/k land on a regular simplex
    // there, and the basis turns them into (k-1)-dimensional coordinates
    // without changing any distance.
    Matrix helmert(k - 1, k);
    for (std::size_t j = 1; j < k; ++j) {
        const double denom = std::sqrt(static_cast<double>(j) * (j + 1));
        for (std::size_t c = 0; c < j; ++c) helmert(j - 1, c) = 1.0 / denom;
        helmert(j - 1, j) = -static_cast<double>(j) / denom;
    }
    const double vertex_norm = std::sqrt(1.0 - 1.0 / static_cast<double>(k));

    Matrix means(k, dim);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k - 1; ++j) {
            // coordinate j of the centered vertex: H (e_i - 1/k) = H e_i
            const double y = helmert(j, i);
            means(i, sem_dims[j]) = mean_scale * y / vertex_norm;
        }
    }

    SyntheticDataset ds;
    ds.x = Matrix(n, dim);
    ds.labels.resize(n);
    ds.class_means = means;
    ds.spec = {"gaussian-mixture", n, dim, k, std::move(sem_dims), mean_scale, within_std,
               seed};
    detail::pairwise_mean_distances(means, ds.delta0, ds.delta_max);

    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t cls = i % k;
        ds.labels[i] = static_cast<int>(cls);
        Rng rng = substream(seed, stream_tag("data"), i);
        for (std::size_t c = 0; c < dim; ++c)
            ds.x(i, c) = means(cls, c) + within_std * rng.normal();
    }
    return ds;
}

// Two interleaved half circles in the plane: class 0 traces
// (cos a, sin a), class 1 traces (1 - cos a, 1/2 - sin a), a uniform on
// [0, pi], plus within_std * N(0, I_2). class_means holds the exact
// expectations (0, 2/pi) and (1, 1/2 - 2/pi).
inline SyntheticDataset two_moons(std::size_t n, double within_std, std::uint64_t seed) {
    if (n == 0) throw UsageError("two_moons: n must be positive");
    if (!(within_std >= 0.0)) throw UsageError("two_moons: within_std must be >= 0");

    SyntheticDataset ds;
    ds.x = Matrix(n, 2);
    ds.labels.resize(n);
    ds.class_means = Matrix(2, 2);
    const double two_over_pi = 2.0 / std::numbers::pi;
    ds.class_means(0, 0) = 0.0;
    ds.class_means(0, 1) = two_over_pi;
    ds.class_means(1, 0) = 1.0;
    ds.class_means(1, 1) = 0.5 - two_over_pi;
    ds.spec = {"two-moons", n, 2, 2, {0, 1}, 1.0, within_std, seed};
    detail::pairwise_mean_distances(ds.class_means, ds.delta0, ds.delta_max);

    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t cls = i % 2;
        ds.labels[i] = static_cast<int>(cls);
        Rng rng = substream(seed, stream_tag("data"), i);
        const double a = rng.uniform(0.0, std::numbers::pi);
        double p0 = std::cos(a), p1 = std::sin(a);
        if (cls == 1) {
            p0 = 1.0 - p0;
            p1 = 0.5 - p1;
        }
        ds.x(i, 0) = p0 + within_std * rng.normal();
        ds.x(i, 1) = p1 + within_std * rng.normal();
    }
    return ds;
}

// Samples go to `path` as CSV (header label,dim0..dim{d-1}); everything
// needed to rebuild the dataset object goes to path + ".meta.json".
inline void dump_dataset(const SyntheticDataset& ds, const std::string& path) {
    std::vector<std::string> header{"label"};
    for (std::size_t c = 0; c < ds.x.cols(); ++c) header.push_back("dim" + std::to_string(c));
    CsvWriter csv(path, header);
    for (std::size_t i = 0; i < ds.x.rows(); ++i) {
        std::vector<std::string> cells{std::to_string(ds.labels[i])};
        for (std::size_t c = 0; c < ds.x.cols(); ++c) cells.push_back(fmt_double(ds.x(i, c)));
        csv.write_row_strings(cells);
    }
    csv.close();

    nlohmann::json meta;
    meta["kind"] = ds.spec.kind;
    meta["n"] = ds.spec.n;
    meta["dim"] = ds.spec.dim;
    meta["k"] = ds.spec.k;
    meta["sem_dims"] = ds.spec.sem_dims;
    meta["mean_scale"] = ds.spec.mean_scale;
    meta["within_std"] = ds.spec.within_std;
    meta["seed"] = ds.spec.seed;
    meta["delta0"] = ds.delta0;
    meta["delta_max"] = ds.delta_max;
    std::vector<std::vector<double>> means(ds.class_means.rows());
    for (std::size_t i = 0; i < ds.class_means.rows(); ++i)
        means[i].assign(ds.class_means.row(i), ds.class_means.row(i) + ds.class_means.cols());
    meta["class_means"] = means;

    std::ofstream out(path + ".meta.json", std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + ".meta.json' for writing");
    out << meta.dump(2) << "\n";
    if (!out) throw IoError("failed writing '" + path + ".meta.json'");
}

inline SyntheticDataset load_dataset(const std::string& path) {
    const auto lines = read_lines(path);
    if (lines.empty()) throw IoError(path + ": empty dataset file");

    const auto header = split(lines[0], ',');
    if (header.empty() || header[0] != "label")
        throw IoError(path + ":1: expected header starting with 'label'");
    const std::size_t dim = header.size() - 1;
    for (std::size_t c = 0; c < dim; ++c)
        if (header[c + 1] != "dim" + std::to_string(c))
            throw IoError(path + ":1: expected column 'dim" + std::to_string(c) + "'");

    SyntheticDataset ds;
    const std::size_t n = lines.size() - 1;
    ds.x = Matrix(n, dim);
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::string& line = lines[i + 1];
        const auto cells = split(line, ',');
        const std::string where = path + ":" + std::to_string(i + 2);
        if (cells.size() != dim + 1)
            throw IoError(where + ": expected " + std::to_string(dim + 1) + " cells, got " +
                          std::to_string(cells.size()));
        ds.labels[i] = static_cast<int>(parse_int(cells[0], where + " label"));
        for (std::size_t c = 0; c < dim; ++c)
            ds.x(i, c) = parse_double(cells[c + 1], where + " dim" + std::to_string(c));
    }

    const std::string meta_path = path + ".meta.json";
    std::ifstream in(meta_path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + meta_path + "'");
    nlohmann::json meta;
    try {
        in >> meta;
        ds.spec.kind = meta.at("kind").get<std::string>();
        ds.spec.n = meta.at("n").get<std::size_t>();
        ds.spec.dim = meta.at("dim").get<std::size_t>();
        ds.spec.k = meta.at("k").get<std::size_t>();
        ds.spec.sem_dims = meta.at("sem_dims").get<std::vector<std::size_t>>();
        ds.spec.mean_scale = meta.at("mean_scale").get<double>();
        ds.spec.within_std = meta.at("within_std").get<double>();
        ds.spec.seed = meta.at("seed").get<std::uint64_t>();
        ds.delta0 = meta.at("delta0").get<double>();
        ds.delta_max = meta.at("delta_max").get<double>();
        const auto means = meta.at("class_means").get<std::vector<std::vector<double>>>();
        ds.class_means = Matrix(means.size(), dim);
        for (std::size_t i = 0; i < means.size(); ++i) {
            if (means[i].size() != dim)
                throw IoError(meta_path + ": class_means row has wrong width");
            for (std::size_t c = 0; c < dim; ++c) ds.class_means(i, c) = means[i][c];
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(meta_path + ": " + e.what());
    }
    if (ds.spec.n != n)
        throw IoError(meta_path + ": metadata says n=" + std::to_string(ds.spec.n) +
                      " but the CSV holds " + std::to_string(n) + " rows");
    if (ds.spec.dim != dim)
        throw IoError(meta_path + ": metadata says dim=" + std::to_string(ds.spec.dim) +
                      " but the CSV holds " + std::to_string(dim) + " columns");
    return ds;
}

}  // namespace lowflow
