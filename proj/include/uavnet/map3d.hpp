#pragma once

// Building-height bounds recovered from classified radio links, and the
// outer loop that feeds them back into link classification.

#include "uavnet/learn.hpp"
#include "uavnet/world.hpp"

#include <vector>

namespace uavnet {

/// Grid geometry of `map` with all heights zero.
CityMap grid_geometry(const CityMap& map);

struct HeightBounds {
    CityMap grid;  // geometry only
    std::vector<double> lower;
    std::vector<double> upper;  // +inf when unconstrained
    std::vector<double> estimate;
    /// LoS rays that constrained each cell.
    std::vector<int> ray_count;

    void validate() const;
    /// Copy of the geometry with `estimate` (or `upper`, capped at `cap`) as heights.
    CityMap estimate_map() const;
    CityMap upper_map(double cap) const;
};

enum class NlosPolicy {
    Ignore,
    /// Raise `lower` on the crossed cell with the highest LoS-only estimate.
    RaiseHighest,
    /// When the LoS upper bounds leave a single crossed cell able to block an
    /// NLoS link, that cell must reach the link: raise its `lower`.
    SoleBlocker,
};

struct BoundsOptions {
    double hmax_prior = 60.0;
    /// Keep the r-th smallest constraint per cell; cells with fewer than r
    /// constraints stay unconstrained.
    int robust_rank = 1;
    NlosPolicy nlos = NlosPolicy::Ignore;
};

/// LoS links (label 1) cap every crossed cell, except the endpoint cells, at
/// the link's lowest altitude over that cell.
HeightBounds infer_bounds(const LabeledDataset& labeled, const NodeIndex& nodes, const CityMap& geometry,
                          const BoundsOptions& options = {});

/// Predicts LoS (1) when the link clears the estimated height surface, else 2.
SegmentPredictor bounds_segment_predictor(const HeightBounds& bounds);

/// Combines 3D bounds with the labeled radio data. A link is LoS when it
/// clears the upper-bound surface (capped at `cap`), or when it clears the
/// estimate surface and the nearest labeled link of the same node is LoS.
SegmentPredictor fused_segment_predictor(const HeightBounds& bounds, const LabeledDataset& labeled,
                                         double cap = 60.0);

struct JointOptions {
    int outer_iters = 5;
    FitOptions fit{};
    BoundsOptions bounds{};
    /// Prior probability that a link has the segment predicted from bounds.
    double prior_confidence = 0.8;
    /// A refinement whose data likelihood is worse than the best so far by more
    /// than this relative amount is rejected and the loop stops.
    double max_nll_increase = 0.01;
};

struct JointIteration {
    double label_accuracy = 0.0;  // against true_segment when present
    int label_changes = 0;
    /// Gaussian negative log-likelihood of the data, without the bounds prior.
    double data_nll = 0.0;
    bool rejected = false;
};

struct JointResult {
    SegmentedModel model;
    HeightBounds bounds;
    LabeledDataset labeled;
    std::vector<JointIteration> trace;
    bool converged = false;
    /// Outer iterations that changed the labels.
    int iterations = 0;
};

JointResult joint_refine(std::span<const Measurement> measurements, const NodeIndex& nodes,
                         const CityMap& geometry, const SegmentedModel& radio, const JointOptions& options = {});

} // namespace uavnet
