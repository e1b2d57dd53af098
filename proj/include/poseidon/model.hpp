#pragma once

// Physics-informed energy-based multi-task network.
//
//   grid (B,18,H,W) ─► [conv3x3 → relu → channel gate → spatial gate] × 2 ─► GAP ─► dense ─► h_s (32)
//   features (B,16) ─► dense → tanh → dense → tanh ─► h_e (32)
//   z = tanh(dense([h_s; h_e]))                   (64)
//   E(z) = dense(tanh(dense(z)))                  (scalar energy)
//   z̃ = [z; tanh(E(z))]                           (65)
//   p_k = σ(head_k(tanh(dense(z̃))))  for k ∈ {aftershock, tsunami, foreshock}
//
// All learnable values, including the raw physics scalars, live in one flat
// vector; the forward pass slices named blocks out of it.

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "poseidon/common.hpp"
#include "poseidon/diff.hpp"
#include "poseidon/physics.hpp"

namespace poseidon::model {

using diff::Shape;
using diff::Tape;
using diff::Var;

inline constexpr std::size_t kLatentDim = 64;
inline constexpr std::size_t kAugmentedDim = kLatentDim + 1;

struct ModelConfig {
    std::size_t grid_channels = 18;
    std::size_t grid_rows = 90;
    std::size_t grid_cols = 180;
    std::size_t conv1_channels = 16;
    std::size_t conv2_channels = 32;
    std::size_t kernel = 3;
    std::size_t attention_reduction = 4;
    std::size_t spatial_kernel = 7;
    std::size_t spatial_dim = 32;
    std::size_t feature_dim = 16;
    std::size_t event_hidden = 32;
    std::size_t event_dim = 32;
    std::size_t energy_hidden = 32;
    std::size_t trunk_dim = 32;
};

inline void validate(const ModelConfig& c) {
    if (c.spatial_dim + c.event_dim != kLatentDim)
        throw invalid_input("ModelConfig: spatial_dim + event_dim must equal the fusion input width 64");
    if (c.kernel % 2 == 0 || c.spatial_kernel % 2 == 0) throw invalid_input("ModelConfig: kernels must be odd");
    if (c.conv1_channels < c.attention_reduction || c.conv2_channels < c.attention_reduction)
        throw invalid_input("ModelConfig: attention reduction exceeds channel count");
    if (c.grid_rows == 0 || c.grid_cols == 0 || c.grid_channels == 0 || c.feature_dim == 0)
        throw invalid_input("ModelConfig: zero-sized input");
}

enum class BlockKind { Weight, Bias, Physics };

struct Block {
    std::string name;
    Shape shape;
    std::size_t offset = 0;
    std::size_t fan_in = 0;
    BlockKind kind = BlockKind::Weight;
    bool relu_follows = false;

    std::size_t size() const { return diff::numel(shape); }
};

/// Shape table: named slices partitioning the flat parameter vector.
class Layout {
public:
    explicit Layout(const ModelConfig& c) {
        validate(c);
        const std::size_t K = c.kernel, C1 = c.conv1_channels, C2 = c.conv2_channels, R = c.attention_reduction;
        conv("enc1.conv", C1, c.grid_channels, K);
        dense("enc1.ca1", C1, C1 / R);
        dense("enc1.ca2", C1 / R, C1);
        conv("enc1.sa", 1, 2, c.spatial_kernel, false);
        conv("enc2.conv", C2, C1, K);
        dense("enc2.ca1", C2, C2 / R);
        dense("enc2.ca2", C2 / R, C2);
        conv("enc2.sa", 1, 2, c.spatial_kernel, false);
        dense("enc.proj", C2, c.spatial_dim);
        dense("evt.fc1", c.feature_dim, c.event_hidden);
        dense("evt.fc2", c.event_hidden, c.event_dim);
        dense("fusion", c.spatial_dim + c.event_dim, kLatentDim);
        dense("energy.fc1", kLatentDim, c.energy_hidden);
        dense("energy.fc2", c.energy_hidden, 1);
        dense("trunk", kAugmentedDim, c.trunk_dim);
        dense("head.aftershock", c.trunk_dim, 1);
        dense("head.tsunami", c.trunk_dim, 1);
        dense("head.foreshock", c.trunk_dim, 1);
        for (const char* n : {"physics.theta_b", "physics.theta_p", "physics.theta_c", "physics.delta_m"})
            add({n, Shape{}, 0, 0, BlockKind::Physics});
    }

    const std::vector<Block>& blocks() const { return blocks_; }
    std::size_t total() const { return total_; }
    const Block& at(const std::string& name) const {
        const auto it = index_.find(name);
        if (it == index_.end()) throw invalid_input("Layout: unknown block '" + name + "'");
        return blocks_[it->second];
    }

private:
    void add(Block b) {
        b.offset = total_;
        total_ += b.size();
        index_[b.name] = blocks_.size();
        blocks_.push_back(std::move(b));
    }
    void conv(const std::string& name, std::size_t out, std::size_t in, std::size_t k, bool relu = true) {
        add({name + ".weight", Shape{out, in, k, k}, 0, in * k * k, BlockKind::Weight, relu});
        add({name + ".bias", Shape{out}, 0, 0, BlockKind::Bias});
    }
    void dense(const std::string& name, std::size_t in, std::size_t out) {
        add({name + ".weight", Shape{in, out}, 0, in, BlockKind::Weight});
        add({name + ".bias", Shape{out}, 0, 0, BlockKind::Bias});
    }

    std::vector<Block> blocks_;
    std::map<std::string, std::size_t> index_;
    std::size_t total_ = 0;
};

struct ModelParams {
    ModelConfig config;
    std::vector<double> values;
    std::uint64_t seed = 0;

    physics::PhysicsParams physics() const {
        const Layout layout(config);
        return {values[layout.at("physics.theta_b").offset], values[layout.at("physics.theta_p").offset],
                values[layout.at("physics.theta_c").offset], values[layout.at("physics.delta_m").offset]};
    }
};

/// Conv weights followed by relu: He-uniform bound √(6/fan_in); other weights: √(3/fan_in).
/// Biases start at zero; physics raws at θ_b = θ_p = 0, θ_c = −5, ΔM = 1.2.
inline ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
    const Layout layout(config);
    ModelParams mp{config, std::vector<double>(layout.total(), 0.0), seed};
    Rng rng = make_rng(seed, 0x1417);
    for (const auto& b : layout.blocks()) {
        if (b.kind != BlockKind::Weight) continue;
        const double bound = std::sqrt((b.relu_follows ? 6.0 : 3.0) / static_cast<double>(b.fan_in));
        for (std::size_t i = 0; i < b.size(); ++i) mp.values[b.offset + i] = bound * (2.0 * uniform01(rng) - 1.0);
    }
    const physics::PhysicsParams raw;
    mp.values[layout.at("physics.theta_b").offset] = raw.theta_b;
    mp.values[layout.at("physics.theta_p").offset] = raw.theta_p;
    mp.values[layout.at("physics.theta_c").offset] = raw.theta_c;
    mp.values[layout.at("physics.delta_m").offset] = raw.delta_m;
    return mp;
}

/// Model inputs for one batch.
struct Batch {
    diff::Tensor grids;     // (B, 18, H, W)
    diff::Tensor features;  // (B, 16)
    std::size_t size() const { return grids.shape.empty() ? 0 : grids.shape[0]; }
};

struct Outputs {
    Var p_aftershock, p_tsunami, p_foreshock;  // (B, 1)
    Var energy;                                // (B, 1)
    Var z;                                     // (B, 64)
    Var z_tilde;                               // (B, 65)
    Var h_s;                                   // (B, spatial_dim)
    std::vector<Var> channel_gates;            // per encoder block, (B, C)
};

/// Binds the flat parameter vector on a tape and runs the network.
class Network {
public:
    Network(const ModelConfig& config, const Var& params) : config_(config), layout_(config), params_(params) {
        if (params.size() != layout_.total())
            throw invalid_input("Network: parameter vector has " + std::to_string(params.size()) + " values, layout needs " +
                                std::to_string(layout_.total()));
    }

    Var block(const std::string& name) const {
        const auto& b = layout_.at(name);
        return diff::reshape(diff::slice(params_, 0, b.offset, b.size()), b.shape);
    }

    Var dense(const Var& x, const std::string& name) const {
        return checked(diff::matmul(x, block(name + ".weight")) + block(name + ".bias"), name);
    }

    /// Conv block: conv → relu → channel attention → spatial attention. Also returns the channel gates.
    std::pair<Var, Var> encoder_block(const Var& x, const std::string& name) const {
        using namespace diff;
        const Var y = relu(conv2d(x, block(name + ".conv.weight"), block(name + ".conv.bias")));
        const auto& s = y.shape();
        const Var pooled = global_avg_pool(y);  // (B, C)
        const Var gates = sigmoid(dense(relu(dense(pooled, name + ".ca1")), name + ".ca2"));
        const Var gated = y * reshape(gates, Shape{s[0], s[1], 1, 1});
        const Var maps = concat({mean(gated, 1), max(gated, 1)}, 1);  // (B, 2, H, W)
        const Var spatial = sigmoid(conv2d(maps, block(name + ".sa.weight"), block(name + ".sa.bias")));
        return {checked(gated * spatial, name), gates};
    }

    Var encode_spatial(const Var& grids, std::vector<Var>* gates = nullptr) const {
        auto [x1, g1] = encoder_block(grids, "enc1");
        auto [x2, g2] = encoder_block(x1, "enc2");
        if (gates) *gates = {g1, g2};
        return dense(diff::global_avg_pool(x2), "enc.proj");
    }

    Var encode_event(const Var& features) const {
        using namespace diff;
        return tanh(dense(tanh(dense(features, "evt.fc1")), "evt.fc2"));
    }

    Var energy(const Var& z) const { return dense(diff::tanh(dense(z, "energy.fc1")), "energy.fc2"); }

    Outputs forward(const Var& grids, const Var& features) const {
        using namespace diff;
        const auto& gs = grids.shape();
        if (gs.size() != 4 || gs[1] != config_.grid_channels || gs[2] != config_.grid_rows || gs[3] != config_.grid_cols)
            throw invalid_input("forward: grid batch " + to_string(gs) + " does not match the model configuration");
        if (features.shape() != Shape{gs[0], config_.feature_dim})
            throw invalid_input("forward: feature batch " + to_string(features.shape()) + " does not match");
        Outputs o;
        o.h_s = encode_spatial(grids, &o.channel_gates);
        const Var h_e = encode_event(features);
        o.z = checked(tanh(dense(concat({o.h_s, h_e}, 1), "fusion")), "fusion");
        o.energy = checked(energy(o.z), "energy");
        o.z_tilde = concat({o.z, tanh(o.energy)}, 1);
        const Var trunk = tanh(dense(o.z_tilde, "trunk"));
        o.p_aftershock = sigmoid(dense(trunk, "head.aftershock"));
        o.p_tsunami = sigmoid(dense(trunk, "head.tsunami"));
        o.p_foreshock = sigmoid(dense(trunk, "head.foreshock"));
        return o;
    }

    Outputs forward(Tape& tape, const Batch& batch) const {
        return forward(tape.leaf(batch.grids), tape.leaf(batch.features));
    }

    physics::DerivedVars physics() const {
        return physics::derive(scalar_block("physics.theta_b"), scalar_block("physics.theta_p"),
                               scalar_block("physics.theta_c"), scalar_block("physics.delta_m"));
    }

    const Layout& layout() const { return layout_; }

private:
    Var scalar_block(const std::string& name) const { return block(name); }

    static Var checked(const Var& v, const std::string& layer) {
        for (double x : v.values())
            if (!std::isfinite(x)) throw numerical_error("non-finite activation in layer '" + layer + "'");
        return v;
    }

    ModelConfig config_;
    Layout layout_;
    Var params_;
};

// ---------------------------------------------------------------------------
// Checkpoint: "key = value" header sections followed by the flat vector,
// one value per line with 17 significant digits.

inline constexpr int kCheckpointVersion = 1;

inline std::string format_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Writes a checkpoint. `extra` holds additional header sections (pipeline settings).
inline void write_checkpoint(std::ostream& out, const ModelParams& mp, const std::string& extra = {}) {
    const Layout layout(mp.config);
    const auto& c = mp.config;
    out << "# poseidon checkpoint\n[checkpoint]\nformat_version = " << kCheckpointVersion << "\nseed = " << mp.seed
        << "\n\n[model]\n";
    out << "grid_channels = " << c.grid_channels << "\ngrid_rows = " << c.grid_rows << "\ngrid_cols = " << c.grid_cols
        << "\nconv1_channels = " << c.conv1_channels << "\nconv2_channels = " << c.conv2_channels
        << "\nkernel = " << c.kernel << "\nattention_reduction = " << c.attention_reduction
        << "\nspatial_kernel = " << c.spatial_kernel << "\nspatial_dim = " << c.spatial_dim
        << "\nfeature_dim = " << c.feature_dim << "\nevent_hidden = " << c.event_hidden << "\nevent_dim = " << c.event_dim
        << "\nenergy_hidden = " << c.energy_hidden << "\ntrunk_dim = " << c.trunk_dim << "\n\n[shapes]\n";
    for (const auto& b : layout.blocks()) {
        out << b.name << " = ";
        for (std::size_t i = 0; i < b.shape.size(); ++i) out << (i ? "x" : "") << b.shape[i];
        if (b.shape.empty()) out << "scalar";
        out << " @ " << b.offset << '\n';
    }
    const auto d = physics::derive(mp.physics());
    out << "\n[learned_physics]\nb = " << format_full(d.b) << "\np = " << format_full(d.p) << "\nc = " << format_full(d.c)
        << "\ndelta_m = " << format_full(d.delta_m) << "\n\n";
    if (!extra.empty()) out << extra << '\n';
    out << "[parameters]\ncount = " << mp.values.size() << '\n';
    for (double v : mp.values) out << format_full(v) << '\n';
}

struct CheckpointFile {
    ModelParams params;
    std::map<std::string, std::map<std::string, std::string>> header;
};

inline CheckpointFile read_checkpoint(std::istream& in) {
    CheckpointFile ck;
    std::string line, section;
    auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        const auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
    };
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        if (line.front() == '[' && line.back() == ']') {
            section = line.substr(1, line.size() - 2);
            if (section == "parameters") break;
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw io_error("checkpoint: malformed header line '" + line + "'");
        ck.header[section][trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    if (section != "parameters") throw io_error("checkpoint: missing [parameters] section");
    auto get = [&](const std::string& sec, const std::string& key) -> std::size_t {
        const auto s = ck.header.find(sec);
        if (s == ck.header.end() || !s->second.count(key)) throw io_error("checkpoint: missing " + sec + "." + key);
        return static_cast<std::size_t>(std::stoull(s->second.at(key)));
    };
    if (get("checkpoint", "format_version") != static_cast<std::size_t>(kCheckpointVersion))
        throw io_error("checkpoint: unsupported format version");
    auto& c = ck.params.config;
    c.grid_channels = get("model", "grid_channels");
    c.grid_rows = get("model", "grid_rows");
    c.grid_cols = get("model", "grid_cols");
    c.conv1_channels = get("model", "conv1_channels");
    c.conv2_channels = get("model", "conv2_channels");
    c.kernel = get("model", "kernel");
    c.attention_reduction = get("model", "attention_reduction");
    c.spatial_kernel = get("model", "spatial_kernel");
    c.spatial_dim = get("model", "spatial_dim");
    c.feature_dim = get("model", "feature_dim");
    c.event_hidden = get("model", "event_hidden");
    c.event_dim = get("model", "event_dim");
    c.energy_hidden = get("model", "energy_hidden");
    c.trunk_dim = get("model", "trunk_dim");
    ck.params.seed = get("checkpoint", "seed");
    std::getline(in, line);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw io_error("checkpoint: missing parameter count");
    const std::size_t count = std::stoull(line.substr(eq + 1));
    if (count != Layout(c).total()) throw io_error("checkpoint: parameter count does not match the shape table");
    ck.params.values.resize(count);
    for (auto& v : ck.params.values) {
        if (!std::getline(in, line)) throw io_error("checkpoint: truncated parameter list");
        v = std::stod(line);
    }
    return ck;
}

inline void save_checkpoint(const std::string& path, const ModelParams& mp, const std::string& extra = {}) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write checkpoint '" + path + "'");
    write_checkpoint(out, mp, extra);
}

inline CheckpointFile load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot read checkpoint '" + path + "'");
    return read_checkpoint(in);
}

}  // namespace poseidon::model
