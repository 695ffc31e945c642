// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures for the unit tests.
#pragma once

#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include <unistd.h>

#include "avdf/corpus.hpp"
#include "avdf/dataset.hpp"
#include "avdf/model.hpp"
#include "avdf/nn.hpp"

namespace avdf::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("avdf_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

inline nn::Mat random_mat(int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    nn::Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

// Smallest useful model: one layer everywhere, width 8.
inline model::ModelConfig tiny_model(int video_dim = 6, int phonemes = 5) {
    model::ModelConfig c;
    c.d_model = 8;
    c.n_heads = 2;
    c.ff_mult = 2;
    c.layers_audio_enc = 1;
    c.layers_video_enc = 1;
    c.layers_joint_dec = 1;
    c.layers_fcd = 1;
    c.layers_tam = 1;
    c.n_phonemes = phonemes;
    c.video_dim = video_dim;
    c.dropout_rate = 0.0;
    return c;
}

inline model::ModelInputs random_inputs(const model::ModelConfig& cfg, int frames, std::mt19937_64& rng) {
    return {random_mat(frames, cfg.audio_in(), rng), random_mat(frames, cfg.video_dim, rng)};
}

// Small corpus for training-loop tests.
inline corpus::CorpusSpec tiny_corpus(int per_class = 6) {
    corpus::CorpusSpec s;
    s.samples_per_class = {per_class, per_class, per_class, per_class};
    s.frames_min = 6;
    s.frames_max = 8;
    s.n_phonemes = 5;
    s.video_dim = 6;
    s.successors_per_phoneme = 2;
    return s;
}

// Central finite difference of f with respect to m(i).
inline double central_difference(nn::Mat& m, Eigen::Index i, const std::function<double()>& f, double h = 1e-6) {
    const double orig = m.data()[i];
    m.data()[i] = orig + h;
    const double up = f();
    m.data()[i] = orig - h;
    const double down = f();
    m.data()[i] = orig;
    return (up - down) / (2 * h);
}

// Fourth-order central stencil; far less roundoff than the two-point form.
inline double central_difference4(nn::Mat& m, Eigen::Index i, const std::function<double()>& f, double h = 1e-4) {
    const double orig = m.data()[i];
    auto at = [&](double x) {
        m.data()[i] = orig + x;
        return f();
    };
    const double d = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
    m.data()[i] = orig;
    return d;
}

inline double relative_error(double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1e-7});
    return std::abs(a - b) / denom;
}

}  // namespace avdf::testing
