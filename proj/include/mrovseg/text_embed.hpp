#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "mrovseg/prompt_templates.hpp"
#include "mrovseg/tensor.hpp"

namespace mrovseg {

// Deterministic toy text encoder: character 3-grams signed-hashed into
// embed_dim buckets, a fixed seeded random rotation, then prompt-template
// ensembling (each filled template embedded and unit-normalized, averaged in
// a canonical order so the result is bit-identical under template
// permutation, then re-normalized).
class TextEmbedder {
public:
    TextEmbedder(int embed_dim, uint64_t seed,
                 std::vector<std::string> templates = default_prompt_templates())
        : dim_(embed_dim), templates_(std::move(templates)) {
        if (embed_dim < 1) throw ContractError("TextEmbedder: embed_dim must be >= 1");
        validate_templates(templates_);
        build_rotation(seed);
    }

    int embed_dim() const { return dim_; }
    const std::vector<std::string>& templates() const { return templates_; }

    // Unit-norm class embedding from the full template ensemble.
    std::vector<double> embed_class(const std::string& name) const {
        if (name.empty()) throw ContractError("embed_class: empty class name");
        std::vector<std::string> filled;
        filled.reserve(templates_.size());
        for (const auto& t : templates_) filled.push_back(fill_template(t, name));
        // canonical accumulation order: sort the filled strings
        std::sort(filled.begin(), filled.end());
        std::vector<double> acc(static_cast<size_t>(dim_), 0.0);
        for (const auto& s : filled) {
            auto e = embed_string(s);
            normalize(e);
            for (int i = 0; i < dim_; ++i) acc[static_cast<size_t>(i)] += e[static_cast<size_t>(i)];
        }
        for (double& v : acc) v /= static_cast<double>(filled.size());
        normalize(acc);
        return acc;
    }

    // Row per class name; duplicates are kept (callers may warn).
    std::vector<std::vector<double>> embed_vocabulary(const std::vector<std::string>& names) const {
        std::vector<std::vector<double>> out;
        out.reserve(names.size());
        for (const auto& n : names) out.push_back(embed_class(n));
        return out;
    }

    template <class S>
    TensorT<S> embed_vocabulary_tensor(const std::vector<std::string>& names) const {
        if (names.empty()) throw ContractError("embed_vocabulary: empty vocabulary");
        TensorT<S> out({static_cast<int>(names.size()), dim_});
        auto rows = embed_vocabulary(names);
        for (size_t k = 0; k < rows.size(); ++k)
            for (int i = 0; i < dim_; ++i)
                out[static_cast<int64_t>(k) * dim_ + i] = static_cast<S>(rows[k][static_cast<size_t>(i)]);
        return out;
    }

    // Raw (pre-ensemble) string embedding: signed 3-gram hash then rotation.
    std::vector<double> embed_string(const std::string& s) const {
        std::vector<double> v(static_cast<size_t>(dim_), 0.0);
        auto add_gram = [&](const char* p, size_t len) {
            uint64_t h = 1469598103934665603ULL;
            for (size_t i = 0; i < len; ++i) {
                h ^= static_cast<unsigned char>(p[i]);
                h *= 1099511628211ULL;
            }
            double sign = ((h >> 17) & 1) ? 1.0 : -1.0;
            v[static_cast<size_t>(h % static_cast<uint64_t>(dim_))] += sign;
        };
        if (s.size() < 3) {
            add_gram(s.data(), s.size());
        } else {
            for (size_t i = 0; i + 3 <= s.size(); ++i) add_gram(s.data() + i, 3);
        }
        // rotate
        std::vector<double> out(static_cast<size_t>(dim_), 0.0);
        for (int r = 0; r < dim_; ++r) {
            const double* row = rotation_.data() + static_cast<size_t>(r) * dim_;
            double acc = 0.0;
            for (int c = 0; c < dim_; ++c) acc += row[c] * v[static_cast<size_t>(c)];
            out[static_cast<size_t>(r)] = acc;
        }
        return out;
    }

    static std::vector<std::string> duplicate_names(const std::vector<std::string>& names) {
        std::vector<std::string> sorted = names;
        std::sort(sorted.begin(), sorted.end());
        std::vector<std::string> dups;
        for (size_t i = 1; i < sorted.size(); ++i)
            if (sorted[i] == sorted[i - 1] && (dups.empty() || dups.back() != sorted[i]))
                dups.push_back(sorted[i]);
        return dups;
    }

private:
    static void normalize(std::vector<double>& v) {
        double ss = 0.0;
        for (double x : v) ss += x * x;
        double n = std::sqrt(ss);
        if (n < 1e-12) {
            // degenerate hash collision wipeout; fall back to a fixed direction
            v.assign(v.size(), 0.0);
            v[0] = 1.0;
            return;
        }
        for (double& x : v) x /= n;
    }

    // Random orthonormal matrix: seeded Gaussian then modified Gram-Schmidt.
    void build_rotation(uint64_t seed) {
        Rng rng(seed);
        rotation_.resize(static_cast<size_t>(dim_) * dim_);
        for (auto& x : rotation_) x = rng.next_normal();
        for (int r = 0; r < dim_; ++r) {
            double* row = rotation_.data() + static_cast<size_t>(r) * dim_;
            for (int p = 0; p < r; ++p) {
                const double* prev = rotation_.data() + static_cast<size_t>(p) * dim_;
                double dot = 0.0;
                for (int c = 0; c < dim_; ++c) dot += row[c] * prev[c];
                for (int c = 0; c < dim_; ++c) row[c] -= dot * prev[c];
            }
            double ss = 0.0;
            for (int c = 0; c < dim_; ++c) ss += row[c] * row[c];
            double inv = 1.0 / std::sqrt(std::max(ss, 1e-30));
            for (int c = 0; c < dim_; ++c) row[c] *= inv;
        }
    }

    int dim_;
    std::vector<std::string> templates_;
    std::vector<double> rotation_;
};

}  // namespace mrovseg
