// svtkit — singing voice transcription toolkit
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "svt/decoder.hpp"
#include "svt/labeling.hpp"
#include "svt/nn.hpp"
#include "svt/notation.hpp"

namespace svt {

inline constexpr int kClassifierDim = 20;  // 1 onset + 1 silence + 5 octave + 13 name
inline constexpr int kSampleRate = 16000;
inline constexpr double kFrameSeconds = 0.02;
inline constexpr int kSamplesPerFrame = 320;  // total frontend stride at 16 kHz

/// Kernel/stride schedule of the convolutional frontend. Total stride 320
/// samples, one output frame per 20 ms of 16 kHz audio.
inline constexpr std::array<int, 7> kFrontendKernels = {10, 3, 3, 3, 3, 2, 2};
inline constexpr std::array<int, 7> kFrontendStrides = {5, 2, 2, 2, 2, 2, 2};

struct LossWeights {
    double onset_positive = 15.0;
    double silence_positive = 1.0;
};

struct ModelConfig {
    int audio_channels = 64;    // frontend conv channels
    int model_dim = 64;         // feature dimension D
    int transformer_blocks = 2;
    int attention_heads = 4;
    int ffn_dim = 256;
    int video_feature_dim = 1;  // columns of the visual input track
    int video_channels = 32;
    int fusion_blocks = 1;
    int video_frame_rate_hz = 50;       // 25 supported via frame doubling
    std::string audio_frontend = "conv";  // "conv" | "file" (pretrained-feature adapter)
    int external_feature_dim = 0;         // input width when audio_frontend == "file"
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"audio_channels", c.audio_channels},
         {"model_dim", c.model_dim},
         {"transformer_blocks", c.transformer_blocks},
         {"attention_heads", c.attention_heads},
         {"ffn_dim", c.ffn_dim},
         {"video_feature_dim", c.video_feature_dim},
         {"video_channels", c.video_channels},
         {"fusion_blocks", c.fusion_blocks},
         {"video_frame_rate_hz", c.video_frame_rate_hz},
         {"audio_frontend", c.audio_frontend},
         {"external_feature_dim", c.external_feature_dim}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    c = ModelConfig{};
    c.audio_channels = j.value("audio_channels", c.audio_channels);
    c.model_dim = j.value("model_dim", c.model_dim);
    c.transformer_blocks = j.value("transformer_blocks", c.transformer_blocks);
    c.attention_heads = j.value("attention_heads", c.attention_heads);
    c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
    c.video_feature_dim = j.value("video_feature_dim", c.video_feature_dim);
    c.video_channels = j.value("video_channels", c.video_channels);
    c.fusion_blocks = j.value("fusion_blocks", c.fusion_blocks);
    c.video_frame_rate_hz = j.value("video_frame_rate_hz", c.video_frame_rate_hz);
    c.audio_frontend = j.value("audio_frontend", c.audio_frontend);
    c.external_feature_dim = j.value("external_feature_dim", c.external_feature_dim);
}

struct EncoderOutput {
    Mat features;  // T x D
    FrameGrid grid;
};

// ---------------------------------------------------------------------------
// Transformer trunk shared by the encoders: input projection, positional
// encoding, encoder blocks.
// ---------------------------------------------------------------------------

class EncoderTrunk {
public:
    EncoderTrunk(const std::string& name, int in_dim, const ModelConfig& cfg, Rng& rng)
        : proj_(name + ".proj", in_dim, cfg.model_dim, rng) {
        for (int i = 0; i < cfg.transformer_blocks; ++i) {
            blocks_.push_back(std::make_unique<TransformerBlock>(
                name + ".block" + std::to_string(i), cfg.model_dim, cfg.attention_heads,
                cfg.ffn_dim, rng));
        }
    }

    Mat forward(const Mat& x) {
        Mat h = proj_.forward(x);
        add_positional_encoding(h);
        for (auto& b : blocks_) h = b->forward(h);
        return h;
    }

    Mat backward(const Mat& dy) {
        Mat d = dy;
        for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) d = (*it)->backward(d);
        return proj_.backward(d);
    }

    void params(ParamRefs& out) {
        proj_.params(out);
        for (auto& b : blocks_) b->params(out);
    }

private:
    Linear proj_;
    std::vector<std::unique_ptr<TransformerBlock>> blocks_;
};

// ---------------------------------------------------------------------------
// Toy audio encoder: the frontend kernel/stride schedule of the reference
// system at a small channel count, followed by the transformer trunk.
// Consumes raw 16 kHz mono waveforms; emits one feature row per 20 ms.
// ---------------------------------------------------------------------------

class AudioEncoder {
public:
    AudioEncoder(const ModelConfig& cfg, Rng& rng) {
        int in_ch = 1;
        for (std::size_t i = 0; i < kFrontendKernels.size(); ++i) {
            convs_.push_back(std::make_unique<Conv1d>("audio.conv" + std::to_string(i), in_ch,
                                                      cfg.audio_channels, kFrontendKernels[i],
                                                      kFrontendStrides[i], 0, rng));
            in_ch = cfg.audio_channels;
        }
        acts_.resize(convs_.size());
        trunk_ = std::make_unique<EncoderTrunk>("audio.trunk", cfg.audio_channels, cfg, rng);
    }

    /// Output frame count for a waveform length, by the conv arithmetic
    /// T_out = floor((T_in - kernel) / stride) + 1 per layer.
    static int output_frames(int num_samples) {
        int len = num_samples;
        for (std::size_t i = 0; i < kFrontendKernels.size(); ++i) {
            if (len < kFrontendKernels[i]) return 0;
            len = (len - kFrontendKernels[i]) / kFrontendStrides[i] + 1;
        }
        return len;
    }

    EncoderOutput forward(const std::vector<double>& waveform) {
        if (output_frames(static_cast<int>(waveform.size())) <= 0) {
            throw ValidationError("waveform of " + std::to_string(waveform.size()) +
                                  " samples is shorter than the encoder receptive field");
        }
        Mat h = Eigen::Map<const Eigen::VectorXd>(waveform.data(),
                                                  static_cast<Eigen::Index>(waveform.size()));
        for (std::size_t i = 0; i < convs_.size(); ++i) {
            h = acts_[i].forward(convs_[i]->forward(h));
        }
        EncoderOutput out;
        out.features = trunk_->forward(h);
        out.grid.frame_length = kFrameSeconds;
        out.grid.num_frames = static_cast<int>(out.features.rows());
        return out;
    }

    void backward(const Mat& dfeatures) {
        Mat d = trunk_->backward(dfeatures);
        for (std::size_t i = convs_.size(); i-- > 0;) {
            d = convs_[i]->backward(acts_[i].backward(d));
        }
    }

    void params(ParamRefs& out) {
        for (auto& c : convs_) c->params(out);
        trunk_->params(out);
    }

private:
    std::vector<std::unique_ptr<Conv1d>> convs_;
    std::vector<Gelu> acts_;
    std::unique_ptr<EncoderTrunk> trunk_;
};

// ---------------------------------------------------------------------------
// Toy video encoder: length-preserving temporal convolutions over the 50 Hz
// visual feature track, then the transformer trunk. One output frame per
// input frame (20 ms).
// ---------------------------------------------------------------------------

class VideoEncoder {
public:
    VideoEncoder(const ModelConfig& cfg, Rng& rng) {
        convs_.push_back(std::make_unique<Conv1d>("video.conv0", cfg.video_feature_dim,
                                                  cfg.video_channels, 3, 1, 1, rng));
        convs_.push_back(std::make_unique<Conv1d>("video.conv1", cfg.video_channels,
                                                  cfg.video_channels, 3, 1, 1, rng));
        acts_.resize(convs_.size());
        trunk_ = std::make_unique<EncoderTrunk>("video.trunk", cfg.video_channels, cfg, rng);
    }

    EncoderOutput forward(const Mat& track) {
        if (track.rows() == 0) throw ValidationError("empty visual feature track");
        Mat h = track;
        for (std::size_t i = 0; i < convs_.size(); ++i) {
            h = acts_[i].forward(convs_[i]->forward(h));
        }
        EncoderOutput out;
        out.features = trunk_->forward(h);
        out.grid.frame_length = kFrameSeconds;
        out.grid.num_frames = static_cast<int>(out.features.rows());
        return out;
    }

    void backward(const Mat& dfeatures) {
        Mat d = trunk_->backward(dfeatures);
        for (std::size_t i = convs_.size(); i-- > 0;) {
            d = convs_[i]->backward(acts_[i].backward(d));
        }
    }

    void params(ParamRefs& out) {
        for (auto& c : convs_) c->params(out);
        trunk_->params(out);
    }

private:
    std::vector<std::unique_ptr<Conv1d>> convs_;
    std::vector<Gelu> acts_;
    std::unique_ptr<EncoderTrunk> trunk_;
};

// ---------------------------------------------------------------------------
// Pretrained-feature adapter: stands in for an external SSL encoder by
// reading T x F features from file and passing them through the trunk.
// ---------------------------------------------------------------------------

class ExternalFeatureEncoder {
public:
    ExternalFeatureEncoder(const ModelConfig& cfg, Rng& rng) {
        if (cfg.external_feature_dim <= 0) {
            throw ValidationError("external_feature_dim must be set for the file frontend");
        }
        trunk_ = std::make_unique<EncoderTrunk>("extern.trunk", cfg.external_feature_dim, cfg, rng);
    }

    EncoderOutput forward(const Mat& features) {
        EncoderOutput out;
        out.features = trunk_->forward(features);
        out.grid.frame_length = kFrameSeconds;
        out.grid.num_frames = static_cast<int>(out.features.rows());
        return out;
    }

    void backward(const Mat& dfeatures) { trunk_->backward(dfeatures); }
    void params(ParamRefs& out) { trunk_->params(out); }

private:
    std::unique_ptr<EncoderTrunk> trunk_;
};

/// Aligns two frame-synchronous feature streams that may differ by one frame
/// (conv edge loss); larger mismatches are errors.
inline int aligned_frames(int audio_frames, int video_frames) {
    if (std::abs(audio_frames - video_frames) > 1) {
        throw ValidationError("audio/video frame counts differ by more than one frame (" +
                              std::to_string(audio_frames) + " vs " +
                              std::to_string(video_frames) + ")");
    }
    return std::min(audio_frames, video_frames);
}

// ---------------------------------------------------------------------------
// Residual cross attention fusion. Per stream
//   s_m = x_m + SelfAtt(x_m) + CrossAtt(query = x_m, kv = x_other)
//   h_m = LN1(s_m);  y_m = LN2(h_m + FFN(h_m))
// and after the last block the streams are concatenated and projected to D.
// With the cross-attention weights zeroed this reduces to a per-stream
// transformer block followed by the projection.
// ---------------------------------------------------------------------------

class RcaBlock {
public:
    RcaBlock(const std::string& name, int dim, int heads, int ffn_dim, Rng& rng)
        : self_a_(name + ".self_a", dim, heads, rng), self_v_(name + ".self_v", dim, heads, rng),
          cross_a_(name + ".cross_a", dim, heads, rng),
          cross_v_(name + ".cross_v", dim, heads, rng), ln1_a_(name + ".ln1_a", dim, rng),
          ln1_v_(name + ".ln1_v", dim, rng), ffn_a_(name + ".ffn_a", dim, ffn_dim, rng),
          ffn_v_(name + ".ffn_v", dim, ffn_dim, rng), ln2_a_(name + ".ln2_a", dim, rng),
          ln2_v_(name + ".ln2_v", dim, rng) {}

    std::pair<Mat, Mat> forward(const Mat& xa, const Mat& xv) {
        if (xa.rows() != xv.rows() || xa.cols() != xv.cols()) {
            throw ValidationError("fusion streams must share T and D");
        }
        const Mat sa = xa + self_a_.forward(xa, xa) + cross_a_.forward(xa, xv);
        const Mat sv = xv + self_v_.forward(xv, xv) + cross_v_.forward(xv, xa);
        const Mat ha = ln1_a_.forward(sa);
        const Mat hv = ln1_v_.forward(sv);
        Mat ya = ln2_a_.forward(ha + ffn_a_.forward(ha));
        Mat yv = ln2_v_.forward(hv + ffn_v_.forward(hv));
        return {std::move(ya), std::move(yv)};
    }

    std::pair<Mat, Mat> backward(const Mat& dya, const Mat& dyv) {
        const Mat dha_sum = ln2_a_.backward(dya);
        const Mat dha = dha_sum + ffn_a_.backward(dha_sum);
        const Mat dsa = ln1_a_.backward(dha);

        const Mat dhv_sum = ln2_v_.backward(dyv);
        const Mat dhv = dhv_sum + ffn_v_.backward(dhv_sum);
        const Mat dsv = ln1_v_.backward(dhv);

        auto [dsa_q, dsa_kv] = self_a_.backward(dsa);
        auto [dca_q, dca_kv] = cross_a_.backward(dsa);
        auto [dsv_q, dsv_kv] = self_v_.backward(dsv);
        auto [dcv_q, dcv_kv] = cross_v_.backward(dsv);

        Mat dxa = dsa + dsa_q + dsa_kv + dca_q + dcv_kv;
        Mat dxv = dsv + dsv_q + dsv_kv + dcv_q + dca_kv;
        return {std::move(dxa), std::move(dxv)};
    }

    void params(ParamRefs& out) {
        self_a_.params(out);
        self_v_.params(out);
        cross_a_.params(out);
        cross_v_.params(out);
        ln1_a_.params(out);
        ln1_v_.params(out);
        ffn_a_.params(out);
        ffn_v_.params(out);
        ln2_a_.params(out);
        ln2_v_.params(out);
    }

    /// Zeroes the cross-attention weights (degenerate configuration).
    void zero_cross_attention() {
        ParamRefs refs;
        cross_a_.params(refs);
        cross_v_.params(refs);
        for (Tensor* t : refs) t->value.setZero();
    }

private:
    MultiHeadAttention self_a_, self_v_, cross_a_, cross_v_;
    LayerNorm ln1_a_, ln1_v_;
    FeedForward ffn_a_, ffn_v_;
    LayerNorm ln2_a_, ln2_v_;
};

class FusionModule {
public:
    FusionModule(const ModelConfig& cfg, Rng& rng)
        : proj_("fusion.proj", 2 * cfg.model_dim, cfg.model_dim, rng) {
        for (int i = 0; i < cfg.fusion_blocks; ++i) {
            blocks_.push_back(std::make_unique<RcaBlock>("fusion.block" + std::to_string(i),
                                                         cfg.model_dim, cfg.attention_heads,
                                                         cfg.ffn_dim, rng));
        }
    }

    Mat forward(const Mat& audio, const Mat& video) {
        Mat a = audio, v = video;
        for (auto& b : blocks_) {
            auto [na, nv] = b->forward(a, v);
            a = std::move(na);
            v = std::move(nv);
        }
        Mat cat(a.rows(), a.cols() + v.cols());
        cat << a, v;
        cat_cols_ = static_cast<int>(a.cols());
        return proj_.forward(cat);
    }

    std::pair<Mat, Mat> backward(const Mat& dy) {
        const Mat dcat = proj_.backward(dy);
        Mat da = dcat.leftCols(cat_cols_);
        Mat dv = dcat.rightCols(dcat.cols() - cat_cols_);
        for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
            auto [na, nv] = (*it)->backward(da, dv);
            da = std::move(na);
            dv = std::move(nv);
        }
        return {std::move(da), std::move(dv)};
    }

    void params(ParamRefs& out) {
        for (auto& b : blocks_) b->params(out);
        proj_.params(out);
    }

    std::vector<std::unique_ptr<RcaBlock>>& blocks() { return blocks_; }

private:
    std::vector<std::unique_ptr<RcaBlock>> blocks_;
    Linear proj_;
    int cat_cols_ = 0;
};

// ---------------------------------------------------------------------------
// Classifier: single affine map D -> 20, split (1, 1, 5, 13)
// ---------------------------------------------------------------------------

class Classifier {
public:
    Classifier(const ModelConfig& cfg, Rng& rng)
        : linear_("classifier", cfg.model_dim, kClassifierDim, rng) {}

    Mat forward(const Mat& features) { return linear_.forward(features); }
    Mat backward(const Mat& dlogits) { return linear_.backward(dlogits); }
    void params(ParamRefs& out) { linear_.params(out); }

private:
    Linear linear_;
};

inline FrameLogits split_logits(const Mat& raw) {
    if (raw.cols() != kClassifierDim) throw ValidationError("classifier output must have 20 columns");
    const int T = static_cast<int>(raw.rows());
    FrameLogits out;
    out.resize(T);
    for (int t = 0; t < T; ++t) {
        out.onset[t] = raw(t, 0);
        out.silence[t] = raw(t, 1);
        for (int c = 0; c < kOctaveClasses; ++c) out.octave[t][c] = raw(t, 2 + c);
        for (int c = 0; c < kNameClasses; ++c) out.name[t][c] = raw(t, 7 + c);
    }
    return out;
}

inline Mat merge_logit_grads(const FrameLogits& g) {
    Mat out(g.frames(), kClassifierDim);
    for (int t = 0; t < g.frames(); ++t) {
        out(t, 0) = g.onset[t];
        out(t, 1) = g.silence[t];
        for (int c = 0; c < kOctaveClasses; ++c) out(t, 2 + c) = g.octave[t][c];
        for (int c = 0; c < kNameClasses; ++c) out(t, 7 + c) = g.name[t][c];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Masked SVT loss in batch mode:
//   L = (1 / sum M) * sum_b sum_t M_t^b [ BCE(sig(O_t), O; w_o)
//        + BCE(sig(S_t), S; w_s) + CE(V_t, V) + CE(P_t, P) ]
// The positive weight multiplies the positive-target BCE term. All terms are
// evaluated from logits with log-sum-exp stabilization.
// ---------------------------------------------------------------------------

namespace detail {

inline double bce_from_logit(double logit, int target, double positive_weight) {
    return target ? positive_weight * softplus(-logit) : softplus(logit);
}

inline double bce_grad_from_logit(double logit, int target, double positive_weight) {
    const double s = sigmoid(logit);
    return target ? positive_weight * (s - 1.0) : s;
}

template <std::size_t N>
double ce_from_logits(const std::array<double, N>& logits, int target) {
    return logsumexp(logits.begin(), logits.end()) - logits[static_cast<std::size_t>(target)];
}

template <std::size_t N>
std::array<double, N> ce_grad_from_logits(const std::array<double, N>& logits, int target) {
    const double lse = logsumexp(logits.begin(), logits.end());
    std::array<double, N> g{};
    for (std::size_t i = 0; i < N; ++i) g[i] = std::exp(logits[i] - lse);
    g[static_cast<std::size_t>(target)] -= 1.0;
    return g;
}

}  // namespace detail

struct BatchLoss {
    double value = 0.0;
    std::vector<FrameLogits> dlogits;  // same shapes as the inputs
};

inline double mask_total(const std::vector<std::vector<std::uint8_t>>& mask) {
    double total = 0.0;
    for (const auto& row : mask)
        for (auto m : row) total += m;
    return total;
}

inline double svt_loss(const std::vector<FrameLogits>& logits,
                       const std::vector<FrameTargets>& targets,
                       const std::vector<std::vector<std::uint8_t>>& mask,
                       const LossWeights& weights = {}) {
    if (logits.size() != targets.size() || logits.size() != mask.size() || logits.empty()) {
        throw ValidationError("svt_loss: batch arrays must be non-empty and aligned");
    }
    const double denom = mask_total(mask);
    if (denom <= 0.0) throw ValidationError("svt_loss: all-zero mask");
    double sum = 0.0;
    for (std::size_t b = 0; b < logits.size(); ++b) {
        const auto& l = logits[b];
        const auto& y = targets[b];
        for (int t = 0; t < l.frames(); ++t) {
            if (t >= static_cast<int>(mask[b].size()) || !mask[b][t]) continue;
            sum += detail::bce_from_logit(l.onset[t], y.onset[t], weights.onset_positive);
            sum += detail::bce_from_logit(l.silence[t], y.silence[t], weights.silence_positive);
            sum += detail::ce_from_logits(l.octave[t], y.octave[t]);
            sum += detail::ce_from_logits(l.name[t], y.name[t]);
        }
    }
    return sum / denom;
}

/// Loss plus d(loss)/d(logits), for training.
inline BatchLoss svt_loss_with_grad(const std::vector<FrameLogits>& logits,
                                    const std::vector<FrameTargets>& targets,
                                    const std::vector<std::vector<std::uint8_t>>& mask,
                                    const LossWeights& weights = {}) {
    if (logits.size() != targets.size() || logits.size() != mask.size() || logits.empty()) {
        throw ValidationError("svt_loss: batch arrays must be non-empty and aligned");
    }
    const double denom = mask_total(mask);
    if (denom <= 0.0) throw ValidationError("svt_loss: all-zero mask");
    BatchLoss out;
    double sum = 0.0;
    out.dlogits.resize(logits.size());
    for (std::size_t b = 0; b < logits.size(); ++b) {
        const auto& l = logits[b];
        const auto& y = targets[b];
        auto& g = out.dlogits[b];
        g.resize(l.frames());
        for (int t = 0; t < l.frames(); ++t) {
            if (t >= static_cast<int>(mask[b].size()) || !mask[b][t]) continue;
            sum += detail::bce_from_logit(l.onset[t], y.onset[t], weights.onset_positive);
            sum += detail::bce_from_logit(l.silence[t], y.silence[t], weights.silence_positive);
            sum += detail::ce_from_logits(l.octave[t], y.octave[t]);
            sum += detail::ce_from_logits(l.name[t], y.name[t]);
            g.onset[t] = detail::bce_grad_from_logit(l.onset[t], y.onset[t], weights.onset_positive) / denom;
            g.silence[t] =
                detail::bce_grad_from_logit(l.silence[t], y.silence[t], weights.silence_positive) / denom;
            auto gv = detail::ce_grad_from_logits(l.octave[t], y.octave[t]);
            auto gp = detail::ce_grad_from_logits(l.name[t], y.name[t]);
            for (int c = 0; c < kOctaveClasses; ++c) g.octave[t][c] = gv[c] / denom;
            for (int c = 0; c < kNameClasses; ++c) g.name[t][c] = gp[c] / denom;
        }
    }
    out.value = sum / denom;
    return out;
}

/// Convenience wrapper: fuse two equal-shape feature streams.
inline Mat rca_fuse(FusionModule& fusion, const Mat& audio, const Mat& video) {
    return fusion.forward(audio, video);
}

// ---------------------------------------------------------------------------
// Full transcription model
// ---------------------------------------------------------------------------

enum class SystemMode { kAudio, kVideo, kAudioVisual };

inline const char* system_mode_name(SystemMode m) {
    switch (m) {
        case SystemMode::kAudio: return "A";
        case SystemMode::kVideo: return "V";
        case SystemMode::kAudioVisual: return "AV";
    }
    return "?";
}

inline SystemMode system_mode_from_name(const std::string& name) {
    if (name == "A") return SystemMode::kAudio;
    if (name == "V") return SystemMode::kVideo;
    if (name == "AV") return SystemMode::kAudioVisual;
    throw ValidationError("unknown system mode: " + name + " (expected A, V, or AV)");
}

struct ModelInput {
    const std::vector<double>* audio = nullptr;  // raw 16 kHz waveform
    const Mat* audio_features = nullptr;         // file frontend only
    const Mat* visual = nullptr;                 // 50 Hz track
};

/// Encoder(s) + optional fusion + classifier, assembled per system mode.
class SvtModel {
public:
    SvtModel(SystemMode mode, const ModelConfig& cfg, std::uint64_t seed)
        : mode_(mode), config_(cfg) {
        Rng rng(seed);
        const bool wants_audio = (mode != SystemMode::kVideo);
        const bool wants_video = (mode != SystemMode::kAudio);
        if (wants_audio) {
            if (cfg.audio_frontend == "conv") {
                audio_encoder_.emplace(cfg, rng);
            } else if (cfg.audio_frontend == "file") {
                external_encoder_.emplace(cfg, rng);
            } else {
                throw ValidationError("unknown audio frontend: " + cfg.audio_frontend);
            }
        }
        if (wants_video) video_encoder_.emplace(cfg, rng);
        if (mode == SystemMode::kAudioVisual) fusion_.emplace(cfg, rng);
        classifier_.emplace(cfg, rng);
    }

    SystemMode mode() const { return mode_; }
    const ModelConfig& config() const { return config_; }

    struct Output {
        Mat raw_logits;  // T x 20
        FrameGrid grid;
    };

    Output forward(const ModelInput& input) {
        Mat features;
        FrameGrid grid{kFrameSeconds, 0};
        switch (mode_) {
            case SystemMode::kAudio: {
                const EncoderOutput enc = encode_audio(input);
                features = enc.features;
                grid = enc.grid;
                audio_frames_ = grid.num_frames;
                break;
            }
            case SystemMode::kVideo: {
                if (!input.visual) throw ValidationError("video mode needs a visual track");
                const EncoderOutput enc = video_encoder_->forward(*input.visual);
                features = enc.features;
                grid = enc.grid;
                video_frames_ = grid.num_frames;
                break;
            }
            case SystemMode::kAudioVisual: {
                if (!input.visual) throw ValidationError("AV mode needs a visual track");
                const EncoderOutput ea = encode_audio(input);
                const EncoderOutput ev = video_encoder_->forward(*input.visual);
                audio_frames_ = ea.grid.num_frames;
                video_frames_ = ev.grid.num_frames;
                fused_frames_ = aligned_frames(audio_frames_, video_frames_);
                features = fusion_->forward(ea.features.topRows(fused_frames_),
                                            ev.features.topRows(fused_frames_));
                grid.num_frames = fused_frames_;
                break;
            }
        }
        Output out;
        out.raw_logits = classifier_->forward(features);
        out.grid = grid;
        return out;
    }

    /// Backpropagates loss gradients; encoder gradients are only accumulated
    /// when through_encoders is set (linear probing and the frozen fusion
    /// stage skip them).
    void backward(const Mat& dlogits, bool through_encoders) {
        const Mat dfeatures = classifier_->backward(dlogits);
        switch (mode_) {
            case SystemMode::kAudio:
                if (through_encoders) backward_audio(dfeatures);
                break;
            case SystemMode::kVideo:
                if (through_encoders) video_encoder_->backward(dfeatures);
                break;
            case SystemMode::kAudioVisual: {
                auto [da, dv] = fusion_->backward(dfeatures);
                if (through_encoders) {
                    Mat da_full = Mat::Zero(audio_frames_, da.cols());
                    da_full.topRows(fused_frames_) = da;
                    Mat dv_full = Mat::Zero(video_frames_, dv.cols());
                    dv_full.topRows(fused_frames_) = dv;
                    backward_audio(da_full);
                    video_encoder_->backward(dv_full);
                }
                break;
            }
        }
    }

    /// Encoder parameter group (phi): everything below the fusion/classifier.
    ParamRefs encoder_params() {
        ParamRefs out;
        if (audio_encoder_) audio_encoder_->params(out);
        if (external_encoder_) external_encoder_->params(out);
        if (video_encoder_) video_encoder_->params(out);
        return out;
    }

    /// Head parameter group (theta, plus psi in AV mode).
    ParamRefs head_params() {
        ParamRefs out;
        if (fusion_) fusion_->params(out);
        classifier_->params(out);
        return out;
    }

    ParamRefs all_params() {
        ParamRefs out = encoder_params();
        for (Tensor* t : head_params()) out.push_back(t);
        return out;
    }

    FusionModule* fusion() { return fusion_ ? &*fusion_ : nullptr; }
    Classifier& classifier() { return *classifier_; }

    /// Raw per-modality encoder features (used by the frozen fusion stage).
    Mat encode_audio_features(const ModelInput& input) { return encode_audio(input).features; }
    Mat encode_video_features(const ModelInput& input) {
        if (!input.visual) throw ValidationError("video features need a visual track");
        return video_encoder_->forward(*input.visual).features;
    }

    /// Expected model frame count for given input lengths (min of the
    /// modality streams), used to pre-truncate targets.
    int expected_frames(int audio_samples, int visual_frames, int audio_feature_rows = 0) const {
        const int audio_frames = config_.audio_frontend == "file"
                                     ? audio_feature_rows
                                     : AudioEncoder::output_frames(audio_samples);
        switch (mode_) {
            case SystemMode::kAudio: return audio_frames;
            case SystemMode::kVideo: return visual_frames;
            case SystemMode::kAudioVisual: return aligned_frames(audio_frames, visual_frames);
        }
        return 0;
    }

private:
    EncoderOutput encode_audio(const ModelInput& input) {
        if (external_encoder_) {
            if (!input.audio_features) {
                throw ValidationError("file frontend needs precomputed audio features");
            }
            return external_encoder_->forward(*input.audio_features);
        }
        if (!input.audio) throw ValidationError("audio mode needs a waveform");
        return audio_encoder_->forward(*input.audio);
    }

    void backward_audio(const Mat& d) {
        if (external_encoder_) {
            external_encoder_->backward(d);
        } else {
            audio_encoder_->backward(d);
        }
    }

    SystemMode mode_;
    ModelConfig config_;
    std::optional<AudioEncoder> audio_encoder_;
    std::optional<ExternalFeatureEncoder> external_encoder_;
    std::optional<VideoEncoder> video_encoder_;
    std::optional<FusionModule> fusion_;
    std::optional<Classifier> classifier_;
    int audio_frames_ = 0;
    int video_frames_ = 0;
    int fused_frames_ = 0;
};

/// FNV-1a over the raw parameter bytes; used to verify freezing contracts.
inline std::uint64_t param_hash(const ParamRefs& params) {
    std::uint64_t h = 1469598103934665603ull;
    for (const Tensor* t : params) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(t->value.data());
        const std::size_t n = static_cast<std::size_t>(t->value.size()) * sizeof(double);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    }
    return h;
}

}  // namespace svt
