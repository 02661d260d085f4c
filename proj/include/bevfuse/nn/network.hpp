#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "bevfuse/common.hpp"
#include "bevfuse/fisheye.hpp"
#include "bevfuse/geometry.hpp"
#include "bevfuse/nn/ops.hpp"
#include "bevfuse/nn/tensor.hpp"

namespace bevfuse::nn {

// Convolution description; dilation_options with more than one entry selects
// the content-aware adaptive mode.
struct ConvSpec {
    int in_channels = 1;
    int out_channels = 1;
    int kh = 3, kw = 3;
    int stride = 1;
    int padding = 0;
    std::vector<int> dilation_options{1};

    void validate() const {
        require(in_channels > 0 && out_channels > 0 && kh > 0 && kw > 0 && stride > 0 &&
                    padding >= 0,
                "nn", "conv spec fields must be positive");
        require(!dilation_options.empty(), "nn", "conv spec needs at least one dilation");
        for (int d : dilation_options) require(d >= 1, "nn", "dilations must be >= 1");
    }
    bool adaptive() const { return dilation_options.size() >= 2; }
};

struct NetworkConfig {
    int pyramid_levels = 3;       // N
    int pyramid_channels = 16;    // encoder width per level
    int bev_channels = 16;        // fused feature width (decoder input)
    std::vector<int> polar_depth_bins;  // per band; derived from band span when empty
    std::vector<int> dilation_options{1, 2, 3, 4};
    double tau = 1.0;
    int classes = 2;              // obstacle / background
    int bev_rows = 12;            // fused BEV raster; decoder output doubles this
    int bev_cols = 24;
    int image_size = 64;
    double band_near = 0.2;
    double band_y_min = 0.0;
    double band_y_max = 1.2;
    bool hard_inference = false;

    void validate() const {
        require(pyramid_levels >= 1, "nn", "need at least one pyramid level");
        require(pyramid_channels >= 1 && bev_channels >= 1, "nn", "channel widths must be >= 1");
        require(classes >= 2, "nn", "need at least two classes");
        require(bev_rows >= 4 && bev_cols >= 4, "nn", "BEV raster too small for the decoder");
        require(tau > 0.0, "nn", "tau must be positive");
        require(!dilation_options.empty(), "nn", "dilation option set is empty");
        require(image_size >= (1 << pyramid_levels), "nn",
                "image too small for the pyramid depth");
    }
};

// Eq.-style hidden prior of the content-aware dilation: a learned 1x1
// convolution over the layer input followed by a bounded nonlinearity,
// producing |D| logits per position (Markov aggregation: no recurrent term).
inline Tensor markov_hidden_prior(const Tensor& x, const Tensor& u_w, const Tensor& u_b) {
    return tanh_op(conv2d(x, u_w, u_b, {1, 0, 1}));
}

inline int argmax_channel(const Tensor& t, int n, int h, int w) {
    const Dims4 d = dims4(t, "argmax");
    int best = 0;
    double bv = t.values()[idx4(d, n, 0, h, w)];
    for (int c = 1; c < d.c; ++c) {
        const double v = t.values()[idx4(d, n, c, h, w)];
        if (v > bv) {
            bv = v;
            best = c;
        }
    }
    return best;
}

// Content-aware dilated convolution: the |D| static dilated responses of one
// shared kernel are blended per position with the DilationField drawn from
// the hidden prior through Gumbel softmax. Odd kernels only (same-padding by
// dilation keeps every branch aligned).
inline Tensor adaptive_dilated_conv(const Tensor& x, const Tensor& w, const Tensor& b,
                                    const Tensor& prior_w, const Tensor& prior_b,
                                    const std::vector<int>& options, double tau,
                                    const Tensor& noise, bool hard = false) {
    require(!options.empty(), "nn", "adaptive_dilated_conv: empty dilation set");
    const Dims4 dw = dims4(w, "adaptive_dilated_conv weights");
    require(dw.h % 2 == 1 && dw.w % 2 == 1, "nn",
            "adaptive_dilated_conv requires odd kernel sizes");

    Tensor probs;
    if (hard) {
        const Tensor logits = markov_hidden_prior(x, prior_w, prior_b);
        const Dims4 dl = dims4(logits, "dilation logits");
        Tensor onehot = Tensor::zeros(logits.shape());
        for (int n = 0; n < dl.n; ++n)
            for (int h = 0; h < dl.h; ++h)
                for (int ww = 0; ww < dl.w; ++ww)
                    onehot.values()[idx4(dl, n, argmax_channel(logits, n, h, ww), h, ww)] = 1.0;
        probs = onehot;
    } else {
        probs = gumbel_softmax(markov_hidden_prior(x, prior_w, prior_b), tau, noise);
    }

    Tensor out;
    for (std::size_t i = 0; i < options.size(); ++i) {
        const int d = options[i];
        const Conv2DGeometry g{1, d * (dw.h - 1) / 2, d};
        const Tensor branch = scale_channels(conv2d(x, w, b, g), select_channel(probs, static_cast<int>(i)));
        out = out.defined() ? add(out, branch) : branch;
    }
    return out;
}

// Learned per-column map from cropped image rows to polar depth bins
// (16*rows -> 16*bins per azimuth column, weights shared across columns).
inline Tensor image_to_polar_bev(const Tensor& cropped, const Tensor& w, const Tensor& b,
                                 int depth_bins) {
    return column_dense(cropped, w, b, depth_bins);
}

// Geometry of one polar->orthographic resampling: azimuth is looked up
// through the fisheye model along the central image row, range through the
// band's annulus. Cells outside the annulus or the camera's azimuth span get
// no taps and stay zero.
inline std::shared_ptr<ResampleMap> build_polar_map(const FisheyeIntrinsics& intr,
                                                    const CameraExtrinsics& ext,
                                                    const DepthBand& band, int depth_bins,
                                                    const GridSpec& bev) {
    require(depth_bins >= 1, "nn", "polar map needs at least one depth bin");
    const Vec2 bore = ext.boresight_ground();
    const Mat3 cam_to_vehicle = ext.rotation().transposed();

    // Ground azimuth of every column, sampled along the central image row.
    std::vector<double> azimuth(intr.width);
    for (int j = 0; j < intr.width; ++j) {
        const Vec3 ray = unproject({j + 0.5, intr.cy}, intr);
        const Vec3 dir = cam_to_vehicle.apply(ray);
        const double n = std::hypot(dir.x, dir.y);
        require(n > 1e-12, "nn", "column ray has no ground component");
        const Vec2 g{dir.x / n, dir.y / n};
        azimuth[j] = std::atan2(bore.x * g.y - bore.y * g.x, bore.x * g.x + bore.y * g.y);
    }
    bool increasing = azimuth.back() > azimuth.front();
    for (int j = 1; j < intr.width; ++j)
        require(increasing ? azimuth[j] > azimuth[j - 1] : azimuth[j] < azimuth[j - 1], "nn",
                "column azimuths are not monotone");

    auto map = std::make_shared<ResampleMap>();
    map->in_depth = depth_bins;
    map->in_azimuth = intr.width;
    map->out_h = bev.rows();
    map->out_w = bev.cols();
    map->taps.resize(static_cast<std::size_t>(map->out_h) * map->out_w);

    const Vec2 cam_pos{ext.x, ext.y};
    const double az_lo = std::min(azimuth.front(), azimuth.back());
    const double az_hi = std::max(azimuth.front(), azimuth.back());
    for (int r = 0; r < map->out_h; ++r) {
        for (int c = 0; c < map->out_w; ++c) {
            const Vec2 cell = cell_center(bev, {r, c});
            const Vec2 dv = cell - cam_pos;
            const double range = norm(dv);
            if (range < band.z_min || range >= band.z_max) continue;
            if (range < 1e-9) continue;
            const Vec2 g{dv.x / range, dv.y / range};
            const double az =
                std::atan2(bore.x * g.y - bore.y * g.x, bore.x * g.x + bore.y * g.y);
            if (az < az_lo || az > az_hi) continue;

            // continuous column via monotone lookup
            int lo = 0, hi = intr.width - 1;
            while (hi - lo > 1) {
                const int mid = (lo + hi) / 2;
                const bool left = increasing ? azimuth[mid] <= az : azimuth[mid] >= az;
                (left ? lo : hi) = mid;
            }
            double col_f;
            if (azimuth[hi] == azimuth[lo]) {
                col_f = lo;
            } else {
                col_f = lo + (az - azimuth[lo]) / (azimuth[hi] - azimuth[lo]);
            }
            col_f = std::clamp(col_f, 0.0, static_cast<double>(intr.width - 1));
            double depth_f = (range - band.z_min) / (band.z_max - band.z_min) * depth_bins - 0.5;
            depth_f = std::clamp(depth_f, 0.0, static_cast<double>(depth_bins - 1));

            const int d0 = static_cast<int>(depth_f);
            const int a0 = static_cast<int>(col_f);
            const double fd = depth_f - d0;
            const double fa = col_f - a0;
            auto& taps = map->taps[static_cast<std::size_t>(r) * map->out_w + c];
            for (int dd = 0; dd <= 1; ++dd)
                for (int da = 0; da <= 1; ++da) {
                    const int d = std::min(d0 + dd, depth_bins - 1);
                    const int a = std::min(a0 + da, intr.width - 1);
                    const double wgt = (dd ? fd : 1.0 - fd) * (da ? fa : 1.0 - fa);
                    if (wgt > 0.0) taps.push_back({d * intr.width + a, wgt});
                }
        }
    }
    return map;
}

inline Tensor polar_to_ortho(const Tensor& polar, const FisheyeIntrinsics& intr,
                             const CameraExtrinsics& ext, const DepthBand& band,
                             const GridSpec& bev) {
    const Dims4 d = dims4(polar, "polar_to_ortho");
    require(d.w == intr.width, "nn", "polar azimuth count must equal the image width");
    return apply_resample(polar, build_polar_map(intr, ext, band, d.h, bev));
}

// Ordered parameter/state registry; iteration order is registration order so
// optimizer sweeps and checkpoints are stable.
class ParamStore {
public:
    Tensor& add(const std::string& name, Tensor t) {
        require(!params_.count(name), "nn", "duplicate parameter " + name);
        t.set_requires_grad(true);
        order_.push_back(name);
        return params_.emplace(name, std::move(t)).first->second;
    }

    bool has(const std::string& name) const { return params_.count(name) > 0; }

    Tensor& get(const std::string& name) {
        auto it = params_.find(name);
        require(it != params_.end(), "nn", "unknown parameter " + name);
        return it->second;
    }

    BatchNormState& add_bn(const std::string& name, int channels) {
        require(!bn_.count(name), "nn", "duplicate batchnorm state " + name);
        bn_order_.push_back(name);
        return bn_.emplace(name, BatchNormState(channels)).first->second;
    }

    BatchNormState& bn(const std::string& name) {
        auto it = bn_.find(name);
        require(it != bn_.end(), "nn", "unknown batchnorm state " + name);
        return it->second;
    }

    const std::vector<std::string>& order() const { return order_; }
    const std::vector<std::string>& bn_order() const { return bn_order_; }

    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& name : order_) n += params_.at(name).size();
        return n;
    }

    void zero_grads() {
        for (const auto& name : order_) params_.at(name).zero_grad();
    }

private:
    std::vector<std::string> order_;
    std::map<std::string, Tensor> params_;
    std::vector<std::string> bn_order_;
    std::map<std::string, BatchNormState> bn_;
};

enum class Mode { Multimodal, VisibleOnly, UlsOnly };

inline std::string mode_name(Mode m) {
    switch (m) {
        case Mode::Multimodal: return "multimodal";
        case Mode::VisibleOnly: return "visible";
        case Mode::UlsOnly: return "uls";
    }
    return "?";
}

inline Mode mode_from_name(const std::string& s) {
    if (s == "multimodal") return Mode::Multimodal;
    if (s == "visible") return Mode::VisibleOnly;
    if (s == "uls") return Mode::UlsOnly;
    fail("nn", "unknown mode '" + s + "'");
}

struct ModelInput {
    Tensor image;  // (1,1,S,S), defined for camera modes
    Tensor uls;    // (1,1,2H,2W), defined for ultrasonic modes
};

// The full perception network. Camera features flow image -> pyramid ->
// per-band crop -> polar -> orthographic BEV; ultrasonic features come from a
// small BEV encoder; CaMFuse blends them; the two-stage decoder emits class
// logits at twice the fused resolution.
class FusionModel {
public:
    FusionModel(Mode mode, NetworkConfig cfg, const GridSpec& data_grid,
                const FisheyeIntrinsics& intr, const CameraExtrinsics& ext, std::uint64_t seed)
        : mode_(mode), cfg_(std::move(cfg)), ext_(ext), init_rng_(derive_seed(seed, 17)) {
        cfg_.validate();
        out_channels_ = mode_ == Mode::UlsOnly ? 1 : cfg_.classes;

        const double rear = data_grid.rear_extent;
        const double lateral = data_grid.lateral_half_extent;
        const double cell = rear / (2.0 * cfg_.bev_rows);
        require(std::abs(2.0 * lateral - cell * 2.0 * cfg_.bev_cols) < 1e-9, "nn",
                "BEV raster aspect must match the grid extents");
        fused_grid_ = GridSpec(lateral, rear, 2.0 * cell, data_grid.anchor);
        require(fused_grid_.rows() == cfg_.bev_rows && fused_grid_.cols() == cfg_.bev_cols, "nn",
                "fused raster does not divide the grid extents");
        output_grid_ = GridSpec(lateral, rear, cell, data_grid.anchor);

        if (uses_camera()) {
            require(intr.width == cfg_.image_size && intr.height == cfg_.image_size, "nn",
                    "calibration does not match the configured image size");
            bands_ = default_depth_bands(cfg_.pyramid_levels, cfg_.band_near, rear,
                                         cfg_.band_y_min, cfg_.band_y_max);
            build_camera_geometry(intr);
        }
        register_params();
    }

    Mode mode() const { return mode_; }
    const NetworkConfig& config() const { return cfg_; }
    const GridSpec& fused_grid() const { return fused_grid_; }
    const GridSpec& output_grid() const { return output_grid_; }
    ParamStore& params() { return params_; }
    const std::vector<DepthBand>& bands() const { return bands_; }
    const std::vector<CropBounds>& crops() const { return crops_; }
    int out_channels() const { return out_channels_; }

    bool uses_camera() const { return mode_ != Mode::UlsOnly; }
    bool uses_ultrasonic() const { return mode_ != Mode::VisibleOnly; }
    bool has_camfuse() const { return mode_ == Mode::Multimodal; }

    void set_tau(double tau) {
        require(tau > 0.0, "nn", "tau must be positive");
        cfg_.tau = tau;
    }

    // Logits (1, classes, 2H, 2W) for occupancy modes, a single-channel
    // centroid heatmap for the ultrasonic-only mode. `gumbel_rng` supplies
    // the softmax-sampling noise during training; eval runs noiseless.
    Tensor forward(const ModelInput& in, bool training, Rng* gumbel_rng = nullptr) {
        Tensor fused;
        if (mode_ == Mode::Multimodal) {
            fused = camfuse(camera_bev(in.image, training), uls_features(in.uls), training,
                            gumbel_rng);
        } else if (mode_ == Mode::VisibleOnly) {
            fused = camera_bev(in.image, training);
        } else {
            fused = uls_features(in.uls);
        }
        return decode(fused);
    }

    // CaMFuse: content-aware dilation on the ultrasonic BEV features,
    // concatenation with the camera stream, then a learned 1x1 projection
    // back to the decoder width.
    Tensor camfuse(const Tensor& cam_bev, const Tensor& uls_bev, bool training, Rng* gumbel_rng) {
        const Dims4 dc = dims4(cam_bev, "camfuse");
        const Dims4 du = dims4(uls_bev, "camfuse");
        require(dc.h == du.h && dc.w == du.w, "nn", "camfuse: spatial mismatch between streams");
        Tensor noise = Tensor::zeros({du.n, static_cast<int>(cfg_.dilation_options.size()), du.h,
                                      du.w});
        if (training && gumbel_rng)
            for (auto& v : noise.values()) v = gumbel_rng->gumbel();
        const bool hard = !training && cfg_.hard_inference;
        const Tensor refined = adaptive_dilated_conv(
            uls_bev, params_.get("camfuse.kernel.w"), params_.get("camfuse.kernel.b"),
            params_.get("camfuse.prior.w"), params_.get("camfuse.prior.b"), cfg_.dilation_options,
            cfg_.tau, noise, hard);
        return conv2d(concat_channels(cam_bev, refined), params_.get("camfuse.proj.w"),
                      params_.get("camfuse.proj.b"), {1, 0, 1});
    }

    Tensor camera_bev(const Tensor& image, bool training) {
        require(image.defined(), "nn", "camera mode requires an image input");
        // strided pyramid
        std::vector<Tensor> levels;
        Tensor f = relu(conv2d(image, params_.get("cam.stem.w"), params_.get("cam.stem.b"),
                               {2, 1, 1}));
        levels.push_back(f);
        for (int l = 1; l < cfg_.pyramid_levels; ++l) {
            f = relu(conv2d(f, params_.get(level_name("cam.down", l) + ".w"),
                            params_.get(level_name("cam.down", l) + ".b"), {2, 1, 1}));
            levels.push_back(f);
        }
        // top-down refinement: upsample deeper level, concat, fuse
        std::vector<Tensor> pyramid(levels.size());
        pyramid.back() = levels.back();
        for (int l = cfg_.pyramid_levels - 2; l >= 0; --l) {
            const Tensor up = upsample2x_nearest(pyramid[l + 1]);
            pyramid[l] = relu(conv2d(concat_channels(levels[l], up),
                                     params_.get(level_name("cam.td", l) + ".w"),
                                     params_.get(level_name("cam.td", l) + ".b"), {1, 1, 1}));
        }

        Tensor bev;
        for (int i = 0; i < cfg_.pyramid_levels; ++i) {
            const std::string base = level_name("band", i);
            const Tensor cropped = slice_rows(pyramid[i], crops_[i].v_min, crops_[i].v_max);
            Tensor reduced = conv2d(cropped, params_.get(base + ".reduce.w"),
                                    params_.get(base + ".reduce.b"), {1, 0, 1});
            reduced = relu(batchnorm2d(reduced, params_.get(base + ".bn.gamma"),
                                       params_.get(base + ".bn.beta"), &params_.bn(base + ".bn"),
                                       training));
            const Tensor polar = image_to_polar_bev(reduced, params_.get(base + ".polar.w"),
                                                    params_.get(base + ".polar.b"), depth_bins_[i]);
            const Tensor ortho = apply_resample(polar, maps_[i]);
            bev = bev.defined() ? add(bev, ortho) : ortho;
        }
        return bev;
    }

    Tensor uls_features(const Tensor& uls) {
        require(uls.defined(), "nn", "ultrasonic mode requires a BEV amplitude input");
        Tensor u = relu(conv2d(uls, params_.get("uls.conv1.w"), params_.get("uls.conv1.b"),
                               {1, 1, 1}));
        u = relu(conv2d(u, params_.get("uls.conv2.w"), params_.get("uls.conv2.b"), {2, 1, 1}));
        u = relu(conv2d(u, params_.get("uls.conv3.w"), params_.get("uls.conv3.b"), {1, 1, 1}));
        return u;
    }

    Tensor decode(const Tensor& fused) {
        return decoder_forward(fused, params_, out_channels_);
    }

    // Two-stage occupancy decoder. Stage 1 keeps resolution and widens
    // 16 -> 32 by twice [conv3x3, conv3x3, concat with the block input].
    // Stage 2 runs parallel 4x4/2x2 stride-2 transpose convolutions, refines
    // the 4x4 branch with a 3x3, concatenates, applies two channel-preserving
    // 3x3 convolutions, re-concatenates, and finishes with two 1x1 layers.
    static Tensor decoder_forward(const Tensor& x, ParamStore& p, int out_channels) {
        const Dims4 d = dims4(x, "decoder");
        require(d.h >= 4 && d.w >= 4, "nn", "decoder input must be at least 4x4");
        Tensor h = relu(conv2d(x, p.get("dec.s1a.w"), p.get("dec.s1a.b"), {1, 1, 1}));
        h = relu(conv2d(h, p.get("dec.s1b.w"), p.get("dec.s1b.b"), {1, 1, 1}));
        const Tensor x1 = concat_channels(h, x);
        h = relu(conv2d(x1, p.get("dec.s1c.w"), p.get("dec.s1c.b"), {1, 1, 1}));
        h = relu(conv2d(h, p.get("dec.s1d.w"), p.get("dec.s1d.b"), {1, 1, 1}));
        const Tensor x2 = concat_channels(h, x);

        const Tensor t4 = relu(conv_transpose2d(x2, p.get("dec.t4.w"), p.get("dec.t4.b"), 2, 1));
        const Tensor a = relu(conv2d(t4, p.get("dec.t4post.w"), p.get("dec.t4post.b"), {1, 1, 1}));
        const Tensor t2 = relu(conv_transpose2d(x2, p.get("dec.t2.w"), p.get("dec.t2.b"), 2, 0));
        const Tensor cat1 = concat_channels(a, t2);
        Tensor b = relu(conv2d(cat1, p.get("dec.mid1.w"), p.get("dec.mid1.b"), {1, 1, 1}));
        b = relu(conv2d(b, p.get("dec.mid2.w"), p.get("dec.mid2.b"), {1, 1, 1}));
        const Tensor cat2 = concat_channels(b, cat1);
        const Tensor head = relu(conv2d(cat2, p.get("dec.head1.w"), p.get("dec.head1.b"), {1, 0, 1}));
        return conv2d(head, p.get("dec.head2.w"), p.get("dec.head2.b"), {1, 0, 1});
    }

private:
    static std::string level_name(const std::string& base, int idx) {
        return base + std::to_string(idx + 1);
    }

    void build_camera_geometry(const FisheyeIntrinsics& intr) {
        for (int l = 0; l < cfg_.pyramid_levels; ++l) {
            const double s = std::pow(2.0, l + 1);
            const FisheyeIntrinsics li(intr.fx / s, intr.fy / s, intr.cx / s, intr.cy / s, intr.k1,
                                       intr.k2, intr.k3, intr.k4,
                                       static_cast<int>(intr.width / s),
                                       static_cast<int>(intr.height / s), intr.theta_max);
            level_intr_.push_back(li);
            crops_.push_back(crop_bounds(li, ext_, bands_[l]));
            int bins;
            if (l < static_cast<int>(cfg_.polar_depth_bins.size())) {
                bins = cfg_.polar_depth_bins[l];
            } else {
                const double cell = fused_grid_.cell_size;
                bins = std::clamp(
                    static_cast<int>(std::llround((bands_[l].z_max - bands_[l].z_min) / cell)), 1,
                    64);
            }
            depth_bins_.push_back(bins);
            maps_.push_back(build_polar_map(li, ext_, bands_[l], bins, fused_grid_));
        }
    }

    void conv_param(const std::string& name, int co, int ci, int kh, int kw, double scale = 1.0) {
        const double stddev = scale * std::sqrt(2.0 / (ci * kh * kw));
        Tensor w = Tensor::zeros({co, ci, kh, kw});
        for (auto& v : w.values()) v = init_rng_.normal(0.0, stddev);
        params_.add(name + ".w", std::move(w));
        params_.add(name + ".b", Tensor::zeros({co}));
    }

    void register_params() {
        const int pc = cfg_.pyramid_channels;
        const int bc = cfg_.bev_channels;
        if (uses_camera()) {
            conv_param("cam.stem", pc, 1, 3, 3);
            for (int l = 1; l < cfg_.pyramid_levels; ++l)
                conv_param(level_name("cam.down", l), pc, pc, 3, 3);
            for (int l = 0; l < cfg_.pyramid_levels - 1; ++l)
                conv_param(level_name("cam.td", l), pc, 2 * pc, 3, 3);
            for (int i = 0; i < cfg_.pyramid_levels; ++i) {
                const std::string base = level_name("band", i);
                conv_param(base + ".reduce", bc, pc, 1, 1);
                Tensor gamma = Tensor::zeros({bc});
                for (auto& v : gamma.values()) v = 1.0;
                params_.add(base + ".bn.gamma", std::move(gamma));
                params_.add(base + ".bn.beta", Tensor::zeros({bc}));
                params_.add_bn(base + ".bn", bc);

                const int rows = crops_[i].rows();
                const int in_dim = bc * rows;
                const int out_dim = bc * depth_bins_[i];
                const double stddev = std::sqrt(2.0 / (in_dim + out_dim));
                Tensor w = Tensor::zeros({out_dim, in_dim});
                for (auto& v : w.values()) v = init_rng_.normal(0.0, stddev);
                params_.add(base + ".polar.w", std::move(w));
                params_.add(base + ".polar.b", Tensor::zeros({out_dim}));
            }
        }
        if (uses_ultrasonic()) {
            conv_param("uls.conv1", 8, 1, 3, 3);
            conv_param("uls.conv2", bc, 8, 3, 3);
            conv_param("uls.conv3", bc, bc, 3, 3);
        }
        if (has_camfuse()) {
            conv_param("camfuse.kernel", bc, bc, 3, 3);
            conv_param("camfuse.prior", static_cast<int>(cfg_.dilation_options.size()), bc, 1, 1,
                       0.1);
            conv_param("camfuse.proj", bc, 2 * bc, 1, 1);
        }
        register_decoder(params_, bc, out_channels_, init_rng_);
    }

public:
    static void register_decoder(ParamStore& p, int bc, int out_channels, Rng& rng) {
        auto conv = [&](const std::string& name, int co, int ci, int k, double scale = 1.0) {
            const double stddev = scale * std::sqrt(2.0 / (ci * k * k));
            Tensor w = Tensor::zeros({co, ci, k, k});
            for (auto& v : w.values()) v = rng.normal(0.0, stddev);
            p.add(name + ".w", std::move(w));
            p.add(name + ".b", Tensor::zeros({co}));
        };
        // transpose conv weights are (Cin, Cout, kh, kw)
        auto tconv = [&](const std::string& name, int ci, int co, int k) {
            const double stddev = std::sqrt(2.0 / (ci * k * k));
            Tensor w = Tensor::zeros({ci, co, k, k});
            for (auto& v : w.values()) v = rng.normal(0.0, stddev);
            p.add(name + ".w", std::move(w));
            p.add(name + ".b", Tensor::zeros({co}));
        };
        conv("dec.s1a", bc, bc, 3);
        conv("dec.s1b", bc, bc, 3);
        conv("dec.s1c", bc, 2 * bc, 3);
        conv("dec.s1d", bc, bc, 3);
        tconv("dec.t4", 2 * bc, bc, 4);
        tconv("dec.t2", 2 * bc, bc, 2);
        conv("dec.t4post", bc, bc, 3);
        conv("dec.mid1", 2 * bc, 2 * bc, 3);
        conv("dec.mid2", 2 * bc, 2 * bc, 3);
        conv("dec.head1", bc, 4 * bc, 1);
        conv("dec.head2", out_channels, bc, 1, 0.1);
    }

private:

    Mode mode_;
    NetworkConfig cfg_;
    CameraExtrinsics ext_;
    Rng init_rng_;
    int out_channels_ = 2;
    GridSpec fused_grid_;
    GridSpec output_grid_;
    std::vector<DepthBand> bands_;
    std::vector<FisheyeIntrinsics> level_intr_;
    std::vector<CropBounds> crops_;
    std::vector<int> depth_bins_;
    std::vector<std::shared_ptr<ResampleMap>> maps_;
    ParamStore params_;
};

}  // namespace bevfuse::nn
