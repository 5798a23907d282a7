#pragma once

// Prompt generation, augmentation and selection for promptable segmenters,
// plus the three-channel prior-context input stack.
//
// Training mode perturbs the box (signed per-face deltas on the four in-plane
// faces), erodes or dilates the prior mask, then drops prompts according to a
// drawn scenario. Test mode only jitters the box on a random non-empty subset
// of the in-plane faces and always keeps both prompts.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bbox.hpp"
#include "error.hpp"
#include "image.hpp"
#include "morphology.hpp"
#include "rng.hpp"

namespace sam2aug
{

enum class Provenance
{
    Initial,
    Augmented,
};

/// Which prompts survive selection.
enum class Scenario
{
    Both = 0,
    BBoxOnly = 1,
    MaskOnly = 2,
    None = 3,
};

inline std::string_view to_string(Scenario s) noexcept
{
    switch (s) {
    case Scenario::Both: return "both";
    case Scenario::BBoxOnly: return "bbox-only";
    case Scenario::MaskOnly: return "mask-only";
    case Scenario::None: return "none";
    }
    return "?";
}

enum class MorphOp
{
    Identity,
    Erode,
    Dilate,
};

/// What augment_prompts actually applied; kept for inspection and tests.
struct AugmentRecord
{
    FaceDeltas bbox_deltas{};
    MorphOp morph_op = MorphOp::Identity;
    int morph_radius = 0;
};

struct PromptSet
{
    Geometry grid;
    std::optional<BBox3> bbox;
    std::optional<BinaryMask> mask;
    Provenance provenance = Provenance::Initial;
    Scenario selection = Scenario::Both;
    AugmentRecord applied;

    bool operator==(const PromptSet& o) const
    {
        return grid == o.grid && bbox == o.bbox && mask == o.mask && provenance == o.provenance &&
               selection == o.selection;
    }
};

enum class BBoxMode
{
    Train,
    Test,
};

struct SelectionWeights
{
    double both = 0.4;
    double bbox_only = 0.25;
    double mask_only = 0.25;
    double none = 0.1;

    std::array<double, 4> as_array() const noexcept { return {both, bbox_only, mask_only, none}; }
};

struct AugPolicy
{
    int bbox_max_px = 5;
    BBoxMode bbox_mode = BBoxMode::Train;
    std::array<int, 2> morph_radius_range{0, 2};
    double morph_op_prob = 0.5; ///< probability of dilation (erosion otherwise)
    SelectionWeights selection_weights;
    std::uint64_t seed = 0;
};

inline void validate(const AugPolicy& p)
{
    if (p.bbox_max_px < 0)
        fail(Errc::InvalidArgument, "bbox_max_px must be >= 0");
    if (p.morph_radius_range[0] < 0 || p.morph_radius_range[1] < p.morph_radius_range[0])
        fail(Errc::InvalidArgument, "morph_radius_range must satisfy 0 <= lo <= hi");
    if (!(p.morph_op_prob >= 0.0 && p.morph_op_prob <= 1.0))
        fail(Errc::InvalidArgument, "morph_op_prob must lie in [0,1]");
    double sum = 0.0;
    for (double w : p.selection_weights.as_array()) {
        if (!(w >= 0.0))
            fail(Errc::InvalidArgument, "selection_weights must be nonnegative");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        fail(Errc::InvalidArgument, "selection_weights must sum to 1");
}

inline void to_json(nlohmann::json& j, const AugPolicy& p)
{
    j = nlohmann::json{
        {"bbox_max_px", p.bbox_max_px},
        {"bbox_mode", p.bbox_mode == BBoxMode::Train ? "train" : "test"},
        {"morph_radius_range", p.morph_radius_range},
        {"morph_op_prob", p.morph_op_prob},
        {"selection_weights",
         {{"both", p.selection_weights.both},
          {"bbox_only", p.selection_weights.bbox_only},
          {"mask_only", p.selection_weights.mask_only},
          {"none", p.selection_weights.none}}},
        {"seed", p.seed},
    };
}

inline void from_json(const nlohmann::json& j, AugPolicy& p)
{
    static const std::array<std::string_view, 6> known{"bbox_max_px",       "bbox_mode", "morph_radius_range",
                                                       "morph_op_prob",     "selection_weights", "seed"};
    for (const auto& [key, _] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            fail(Errc::InvalidArgument, "unknown AugPolicy field '" + key + "'");
    AugPolicy out;
    if (j.contains("bbox_max_px"))
        out.bbox_max_px = j.at("bbox_max_px").get<int>();
    if (j.contains("bbox_mode")) {
        const auto m = j.at("bbox_mode").get<std::string>();
        if (m != "train" && m != "test")
            fail(Errc::InvalidArgument, "bbox_mode must be 'train' or 'test'");
        out.bbox_mode = m == "train" ? BBoxMode::Train : BBoxMode::Test;
    }
    if (j.contains("morph_radius_range"))
        out.morph_radius_range = j.at("morph_radius_range").get<std::array<int, 2>>();
    if (j.contains("morph_op_prob"))
        out.morph_op_prob = j.at("morph_op_prob").get<double>();
    if (j.contains("selection_weights")) {
        const auto& w = j.at("selection_weights");
        out.selection_weights = {w.at("both").get<double>(), w.at("bbox_only").get<double>(),
                                 w.at("mask_only").get<double>(), w.at("none").get<double>()};
    }
    if (j.contains("seed"))
        out.seed = j.at("seed").get<std::uint64_t>();
    validate(out);
    p = out;
}

/// Initial prompt set: tight box of the current mask plus the prior mask.
inline PromptSet generate_prompts(const BinaryMask& current_mask, const BinaryMask& prior_mask)
{
    require_same_dims(current_mask.geom, prior_mask.geom, "generate_prompts");
    PromptSet p;
    p.grid = current_mask.geom;
    p.bbox = mask_bbox(current_mask);
    p.mask = prior_mask;
    return p;
}

/// One test-time jitter draw over the in-plane faces (x0, x1, y0, y1).
/// `faces` bit f set means face f was selected; deltas are signed, positive expands.
struct JitterDraw
{
    std::uint8_t faces = 0;
    std::array<int, 4> deltas{};
};

/// Draws a uniformly random non-empty face subset (one of 15), then for each
/// selected face a magnitude in [0, max_px] and a sign. With `sweep_level`
/// set, every selected face expands by exactly that many voxels and only the
/// subset is random.
inline JitterDraw draw_jitter(Rng& rng, int max_px, std::optional<int> sweep_level = std::nullopt)
{
    JitterDraw d;
    d.faces = static_cast<std::uint8_t>(rng.uniform_int(1, 15));
    for (int f = 0; f < 4; ++f) {
        if (!(d.faces & (1u << f)))
            continue;
        if (sweep_level) {
            d.deltas[f] = *sweep_level;
        } else {
            const int mag = static_cast<int>(rng.uniform_int(0, max_px));
            d.deltas[f] = rng.bernoulli(0.5) ? mag : -mag;
        }
    }
    return d;
}

inline BBox3 apply_jitter(const BBox3& box, const JitterDraw& d, const Index3& bounds)
{
    FaceDeltas deltas{d.deltas[0], d.deltas[1], d.deltas[2], d.deltas[3], 0, 0};
    return expand_bbox(box, deltas, bounds);
}

inline BBox3 test_time_bbox_jitter(const BBox3& box, int max_px, const Index3& bounds, Rng& rng,
                                   std::optional<int> sweep_level = std::nullopt)
{
    return apply_jitter(box, draw_jitter(rng, max_px, sweep_level), bounds);
}

inline Scenario draw_scenario(Rng& rng, const SelectionWeights& w)
{
    const auto weights = w.as_array();
    const double u = rng.uniform01();
    double acc = 0.0;
    int last = 0;
    for (int s = 0; s < 4; ++s) {
        if (weights[s] <= 0.0)
            continue;
        last = s;
        acc += weights[s];
        if (u < acc)
            return static_cast<Scenario>(s);
    }
    return static_cast<Scenario>(last);
}

/// Perturb and select prompts. Pure in (p, policy, rng state).
inline PromptSet augment_prompts(const PromptSet& p, const AugPolicy& policy, Rng& rng)
{
    validate(policy);
    if (p.provenance != Provenance::Initial)
        fail(Errc::InvalidArgument, "augment_prompts expects an initial prompt set");
    PromptSet out = p;
    out.provenance = Provenance::Augmented;
    out.applied = {};

    if (policy.bbox_mode == BBoxMode::Test) {
        if (out.bbox) {
            const auto draw = draw_jitter(rng, policy.bbox_max_px);
            out.applied.bbox_deltas = {draw.deltas[0], draw.deltas[1], draw.deltas[2], draw.deltas[3], 0, 0};
            out.bbox = apply_jitter(*out.bbox, draw, p.grid.dims);
        }
        out.selection = Scenario::Both;
        return out;
    }

    if (out.bbox) {
        FaceDeltas deltas{};
        for (int f = 0; f < 4; ++f)
            deltas[f] = static_cast<int>(rng.uniform_int(-policy.bbox_max_px, policy.bbox_max_px));
        out.applied.bbox_deltas = deltas;
        out.bbox = expand_bbox(*out.bbox, deltas, p.grid.dims);
    }
    if (out.mask) {
        const int radius = static_cast<int>(rng.uniform_int(policy.morph_radius_range[0], policy.morph_radius_range[1]));
        const bool dilation = rng.bernoulli(policy.morph_op_prob);
        out.applied.morph_radius = radius;
        if (radius > 0) {
            const StructuringElement se(Neighborhood::Cross4InPlane, radius);
            out.applied.morph_op = dilation ? MorphOp::Dilate : MorphOp::Erode;
            out.mask = dilation ? dilate(*out.mask, se) : erode(*out.mask, se);
        }
    }

    out.selection = draw_scenario(rng, policy.selection_weights);
    if (out.selection == Scenario::MaskOnly || out.selection == Scenario::None)
        out.bbox.reset();
    if (out.selection == Scenario::BBoxOnly || out.selection == Scenario::None)
        out.mask.reset();
    return out;
}

// ---------------------------------------------------------------------------
// Three-channel input

struct ChannelNorm
{
    double lo = 0.0;       ///< 0.5th percentile
    double hi = 0.0;       ///< 99.5th percentile
    bool degenerate = false; ///< zero range; channel set to zeros
};

struct InputStack
{
    Volume cur_mr;
    Volume pri_mr;
    Volume pri_seg;
    ChannelNorm cur_norm;
    ChannelNorm pri_norm;
};

/// Linear-interpolated percentile (q in [0,100]) of the values.
inline double percentile(std::vector<float> values, double q)
{
    if (values.empty())
        fail(Errc::InvalidArgument, "percentile of empty set");
    const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo_idx = static_cast<std::size_t>(std::floor(pos));
    const auto hi_idx = std::min(lo_idx + 1, values.size() - 1);
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo_idx), values.end());
    const double lo = values[lo_idx];
    double hi = lo;
    if (hi_idx != lo_idx)
        hi = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(hi_idx), values.end());
    return lo + (pos - static_cast<double>(lo_idx)) * (hi - lo);
}

/// Clip to the [0.5, 99.5] percentiles and min-max scale into [0,1].
inline Volume normalize_channel(const Volume& v, ChannelNorm& norm)
{
    norm.lo = percentile(v.data, 0.5);
    norm.hi = percentile(v.data, 99.5);
    Volume out(v.geom, 0.0f);
    const double range = norm.hi - norm.lo;
    norm.degenerate = !(range > 0.0);
    if (norm.degenerate)
        return out;
    for (std::size_t n = 0; n < v.size(); ++n) {
        const double x = std::clamp(static_cast<double>(v.data[n]), norm.lo, norm.hi);
        out.data[n] = static_cast<float>((x - norm.lo) / range);
    }
    return out;
}

inline InputStack assemble_input(const Volume& cur_mr, const Volume& pri_mr, const BinaryMask& pri_seg)
{
    require_same_dims(cur_mr.geom, pri_mr.geom, "assemble_input (priMR)");
    require_same_dims(cur_mr.geom, pri_seg.geom, "assemble_input (priSeg)");
    validate_binary(pri_seg);
    InputStack s;
    s.cur_mr = normalize_channel(cur_mr, s.cur_norm);
    s.pri_mr = normalize_channel(pri_mr, s.pri_norm);
    s.pri_seg = Volume(pri_seg.geom);
    std::copy(pri_seg.data.begin(), pri_seg.data.end(), s.pri_seg.data.begin());
    return s;
}

// ---------------------------------------------------------------------------
// Prior selection

/// One scan of a patient; fraction 0 is the simulation scan.
struct FractionRef
{
    int fraction_index = 0;
    std::string image;
    std::string mask;
};

/// Prior for fraction n is fraction n-1; fraction 1 therefore uses the simulation scan.
inline FractionRef select_prior(int fraction, std::span<const FractionRef> patient)
{
    if (fraction < 1)
        fail(Errc::InvalidArgument, "the simulation scan (fraction 0) has no prior");
    for (const auto& f : patient)
        if (f.fraction_index == fraction - 1)
            return f;
    fail(Errc::MissingPrior, fraction == 1 ? "no simulation scan for fraction 1"
                                           : "fraction " + std::to_string(fraction - 1) + " not found");
}

} // namespace sam2aug
