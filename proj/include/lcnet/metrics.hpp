#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "lcnet/autodiff.hpp"
#include "lcnet/rng.hpp"
#include "lcnet/tensor.hpp"

namespace lcnet {

// integer class mask over a 3D grid
struct LabelVolume {
    std::array<int64_t, 3> extents{1, 1, 1};
    int64_t classes = 2;
    std::vector<int32_t> ids;

    int64_t numel() const { return extents[0] * extents[1] * extents[2]; }
    int32_t at(int64_t z, int64_t y, int64_t x) const {
        return ids[static_cast<size_t>((z * extents[1] + y) * extents[2] + x)];
    }
    void validate() const;
};

// set-based Dice 2|Y∩P| / (|Y|+|P|); both masks empty -> 1.0 (class absent in
// both, counted as agreement)
double dsc(const LabelVolume& truth, const LabelVolume& pred, int32_t class_id);

// 95th-percentile symmetric boundary distance, Euclidean in voxel units.
// Boundary: mask voxel with a face-adjacent non-mask neighbor or at the grid
// edge. Percentile: nearest-rank over the directed-distance multiset.
// Throws MetricError when either class mask is empty.
double hd95(const LabelVolume& truth, const LabelVolume& pred, int32_t class_id);

// exact squared Euclidean distance transform (per-axis lower-envelope passes);
// sources marked non-zero
std::vector<double> edt_squared(const std::vector<uint8_t>& sources, const std::array<int64_t, 3>& ext);

std::vector<uint8_t> class_mask(const LabelVolume& v, int32_t class_id);
std::vector<uint8_t> boundary_mask(const std::vector<uint8_t>& mask, const std::array<int64_t, 3>& ext);

// one-hot target [B, I, D, H, W] from a batch of label volumes
Tensor one_hot(const std::vector<LabelVolume>& labels);

// nearest-neighbor (corner) downsampling by integer per-axis factors
LabelVolume downsample_nearest(const LabelVolume& v, const std::array<int64_t, 3>& factors);

// composite segmentation loss on explicit probabilities; validates that each
// voxel's probabilities are non-negative and sum to 1 (1e-9).
// normalized: (1 - mean_i dice_i) + ce_sum / voxels   [default]
// verbatim:   1 - sum_i dice_i - sum_{v,i} Y*log(P)   [as published; not a
//              usable training objective, kept for transparency]
double seg_loss_value(const Tensor& target_onehot, const Tensor& probs, bool verbatim = false);

// differentiable loss on logits: softmax over the class axis, then the same
// composite; gradient flows to the logits
ad::Var seg_loss(const ad::Var& logits, const Tensor& target_onehot, bool verbatim = false);

// argmax labels from logits [B, I, spatial...]
std::vector<LabelVolume> argmax_labels(const Tensor& logits);

// mean Dice over non-background classes, counts pooled over the batch
double mean_foreground_dice(const Tensor& logits, const std::vector<LabelVolume>& targets);

// synthetic training sample: 1-3 random ellipsoids per non-background class,
// class-dependent intensity plus seeded noise
struct BlobTask {
    struct Blob {
        int32_t cls;
        std::array<double, 3> center;
        std::array<double, 3> radii;
    };
    Tensor volume;  // [1, 1, D, H, W]
    LabelVolume labels;
    std::vector<Blob> blobs;
};

BlobTask make_blob_task(const std::array<int64_t, 3>& extents, int64_t classes, uint64_t seed);

}  // namespace lcnet
