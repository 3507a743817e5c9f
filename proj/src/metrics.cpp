#include "lcnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace lcnet {

void LabelVolume::validate() const {
    if (numel() != static_cast<int64_t>(ids.size())) throw ShapeError("label volume extent/id mismatch");
    for (int32_t id : ids)
        if (id < 0 || id >= classes) throw ValueError("label id " + std::to_string(id) + " out of range");
}

static void require_matching(const LabelVolume& a, const LabelVolume& b) {
    if (a.extents != b.extents) throw ShapeError("label volumes have different extents");
}

double dsc(const LabelVolume& truth, const LabelVolume& pred, int32_t class_id) {
    require_matching(truth, pred);
    int64_t ny = 0, np = 0, ni = 0;
    for (size_t i = 0; i < truth.ids.size(); ++i) {
        const bool y = truth.ids[i] == class_id;
        const bool p = pred.ids[i] == class_id;
        ny += y;
        np += p;
        ni += y && p;
    }
    if (ny + np == 0) return 1.0;  // class absent from both masks
    return 2.0 * static_cast<double>(ni) / static_cast<double>(ny + np);
}

std::vector<uint8_t> class_mask(const LabelVolume& v, int32_t class_id) {
    std::vector<uint8_t> m(v.ids.size());
    for (size_t i = 0; i < v.ids.size(); ++i) m[i] = v.ids[i] == class_id;
    return m;
}

std::vector<uint8_t> boundary_mask(const std::vector<uint8_t>& mask, const std::array<int64_t, 3>& ext) {
    std::vector<uint8_t> out(mask.size(), 0);
    auto idx = [&](int64_t z, int64_t y, int64_t x) { return (z * ext[1] + y) * ext[2] + x; };
    for (int64_t z = 0; z < ext[0]; ++z)
        for (int64_t y = 0; y < ext[1]; ++y)
            for (int64_t x = 0; x < ext[2]; ++x) {
                if (!mask[static_cast<size_t>(idx(z, y, x))]) continue;
                bool edge = z == 0 || z == ext[0] - 1 || y == 0 || y == ext[1] - 1 || x == 0 ||
                            x == ext[2] - 1;
                if (!edge) {
                    edge = !mask[static_cast<size_t>(idx(z - 1, y, x))] ||
                           !mask[static_cast<size_t>(idx(z + 1, y, x))] ||
                           !mask[static_cast<size_t>(idx(z, y - 1, x))] ||
                           !mask[static_cast<size_t>(idx(z, y + 1, x))] ||
                           !mask[static_cast<size_t>(idx(z, y, x - 1))] ||
                           !mask[static_cast<size_t>(idx(z, y, x + 1))];
                }
                out[static_cast<size_t>(idx(z, y, x))] = edge;
            }
    return out;
}

// 1D squared-distance lower envelope (Felzenszwalb & Huttenlocher)
static void edt_1d(const double* f, double* d, int64_t n) {
    constexpr double kInf = 1e18;
    std::vector<int64_t> v(static_cast<size_t>(n));
    std::vector<double> z(static_cast<size_t>(n) + 1);
    int64_t k = 0;
    v[0] = 0;
    z[0] = -kInf;
    z[1] = kInf;
    for (int64_t q = 1; q < n; ++q) {
        double s;
        while (true) {
            const int64_t p = v[static_cast<size_t>(k)];
            s = ((f[q] + static_cast<double>(q * q)) - (f[p] + static_cast<double>(p * p))) /
                (2.0 * static_cast<double>(q - p));
            if (s <= z[static_cast<size_t>(k)]) {
                --k;
            } else {
                break;
            }
        }
        ++k;
        v[static_cast<size_t>(k)] = q;
        z[static_cast<size_t>(k)] = s;
        z[static_cast<size_t>(k) + 1] = kInf;
    }
    k = 0;
    for (int64_t q = 0; q < n; ++q) {
        while (z[static_cast<size_t>(k) + 1] < static_cast<double>(q)) ++k;
        const int64_t p = v[static_cast<size_t>(k)];
        d[q] = static_cast<double>((q - p) * (q - p)) + f[p];
    }
}

std::vector<double> edt_squared(const std::vector<uint8_t>& sources, const std::array<int64_t, 3>& ext) {
    constexpr double kInf = 1e18;
    const int64_t n = ext[0] * ext[1] * ext[2];
    std::vector<double> dt(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) dt[static_cast<size_t>(i)] = sources[static_cast<size_t>(i)] ? 0.0 : kInf;

    std::vector<double> line, out;
    // axis 2 (x)
    for (int64_t z = 0; z < ext[0]; ++z)
        for (int64_t y = 0; y < ext[1]; ++y) {
            double* row = dt.data() + (z * ext[1] + y) * ext[2];
            out.assign(static_cast<size_t>(ext[2]), 0.0);
            edt_1d(row, out.data(), ext[2]);
            std::copy(out.begin(), out.end(), row);
        }
    // axis 1 (y)
    line.resize(static_cast<size_t>(ext[1]));
    out.resize(static_cast<size_t>(ext[1]));
    for (int64_t z = 0; z < ext[0]; ++z)
        for (int64_t x = 0; x < ext[2]; ++x) {
            for (int64_t y = 0; y < ext[1]; ++y) line[static_cast<size_t>(y)] = dt[static_cast<size_t>((z * ext[1] + y) * ext[2] + x)];
            edt_1d(line.data(), out.data(), ext[1]);
            for (int64_t y = 0; y < ext[1]; ++y) dt[static_cast<size_t>((z * ext[1] + y) * ext[2] + x)] = out[static_cast<size_t>(y)];
        }
    // axis 0 (z)
    line.resize(static_cast<size_t>(ext[0]));
    out.resize(static_cast<size_t>(ext[0]));
    for (int64_t y = 0; y < ext[1]; ++y)
        for (int64_t x = 0; x < ext[2]; ++x) {
            for (int64_t z = 0; z < ext[0]; ++z) line[static_cast<size_t>(z)] = dt[static_cast<size_t>((z * ext[1] + y) * ext[2] + x)];
            edt_1d(line.data(), out.data(), ext[0]);
            for (int64_t z = 0; z < ext[0]; ++z) dt[static_cast<size_t>((z * ext[1] + y) * ext[2] + x)] = out[static_cast<size_t>(z)];
        }
    return dt;
}

// nearest-rank percentile: ceil(0.95*n)-th order statistic
static double directed_d95(const std::vector<uint8_t>& from_boundary,
                           const std::vector<uint8_t>& to_boundary, const std::array<int64_t, 3>& ext) {
    const std::vector<double> dt = edt_squared(to_boundary, ext);
    std::vector<double> dist;
    for (size_t i = 0; i < from_boundary.size(); ++i)
        if (from_boundary[i]) dist.push_back(std::sqrt(dt[i]));
    std::sort(dist.begin(), dist.end());
    const auto n = static_cast<int64_t>(dist.size());
    const int64_t rank = (19 * n + 19) / 20;  // ceil(0.95 * n)
    return dist[static_cast<size_t>(rank - 1)];
}

double hd95(const LabelVolume& truth, const LabelVolume& pred, int32_t class_id) {
    require_matching(truth, pred);
    const std::vector<uint8_t> my = class_mask(truth, class_id);
    const std::vector<uint8_t> mp = class_mask(pred, class_id);
    const bool y_empty = std::find(my.begin(), my.end(), uint8_t{1}) == my.end();
    const bool p_empty = std::find(mp.begin(), mp.end(), uint8_t{1}) == mp.end();
    if (y_empty || p_empty)
        throw MetricError("hd95 undefined: class " + std::to_string(class_id) + " has an empty mask (" +
                          (y_empty ? "truth" : "pred") + ")");
    const std::vector<uint8_t> by = boundary_mask(my, truth.extents);
    const std::vector<uint8_t> bp = boundary_mask(mp, truth.extents);
    return std::max(directed_d95(by, bp, truth.extents), directed_d95(bp, by, truth.extents));
}

// ---------------------------------------------------------------------------
// loss

Tensor one_hot(const std::vector<LabelVolume>& labels) {
    if (labels.empty()) throw ShapeError("one_hot: empty batch");
    const auto& first = labels.front();
    const int64_t B = static_cast<int64_t>(labels.size());
    const int64_t I = first.classes;
    Tensor t({B, I, first.extents[0], first.extents[1], first.extents[2]}, "BCDHW");
    const int64_t sp = first.numel();
    for (int64_t b = 0; b < B; ++b) {
        const auto& lv = labels[static_cast<size_t>(b)];
        if (lv.extents != first.extents || lv.classes != I) throw ShapeError("one_hot: inconsistent batch");
        lv.validate();
        for (int64_t s = 0; s < sp; ++s) t[(b * I + lv.ids[static_cast<size_t>(s)]) * sp + s] = 1.0;
    }
    return t;
}

LabelVolume downsample_nearest(const LabelVolume& v, const std::array<int64_t, 3>& factors) {
    LabelVolume out;
    out.classes = v.classes;
    for (int i = 0; i < 3; ++i) {
        if (factors[static_cast<size_t>(i)] < 1 || v.extents[static_cast<size_t>(i)] % factors[static_cast<size_t>(i)] != 0)
            throw ShapeError("downsample factor must divide the extent");
        out.extents[static_cast<size_t>(i)] = v.extents[static_cast<size_t>(i)] / factors[static_cast<size_t>(i)];
    }
    out.ids.resize(static_cast<size_t>(out.numel()));
    for (int64_t z = 0; z < out.extents[0]; ++z)
        for (int64_t y = 0; y < out.extents[1]; ++y)
            for (int64_t x = 0; x < out.extents[2]; ++x)
                out.ids[static_cast<size_t>((z * out.extents[1] + y) * out.extents[2] + x)] =
                    v.at(z * factors[0], y * factors[1], x * factors[2]);
    return out;
}

namespace {

struct LossTerms {
    double value;
    std::vector<double> sum_yp;   // per class
    std::vector<double> sum_sq;   // per class, sum(Y^2 + P^2)
};

LossTerms composite_loss_terms(const Tensor& y, const Tensor& p, bool verbatim) {
    const int64_t B = y.shape()[0], I = y.shape()[1];
    const int64_t sp = y.numel() / (B * I);
    const int64_t V = B * sp;
    LossTerms t;
    t.sum_yp.assign(static_cast<size_t>(I), 0.0);
    t.sum_sq.assign(static_cast<size_t>(I), 0.0);
    double ce_sum = 0.0;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < I; ++i)
            for (int64_t s = 0; s < sp; ++s) {
                const int64_t idx = (b * I + i) * sp + s;
                const double yv = y[idx], pv = p[idx];
                t.sum_yp[static_cast<size_t>(i)] += yv * pv;
                t.sum_sq[static_cast<size_t>(i)] += yv * yv + pv * pv;
                if (yv != 0.0) ce_sum -= yv * std::log(pv);
            }
    double dice_total = 0.0;
    for (int64_t i = 0; i < I; ++i)
        dice_total += 2.0 * t.sum_yp[static_cast<size_t>(i)] / t.sum_sq[static_cast<size_t>(i)];
    if (verbatim) {
        // published composite as printed: dice summed over classes, unnormalized
        // cross-entropy term
        t.value = 1.0 - dice_total + ce_sum;
    } else {
        t.value = (1.0 - dice_total / static_cast<double>(I)) + ce_sum / static_cast<double>(V);
    }
    return t;
}

}  // namespace

double seg_loss_value(const Tensor& target_onehot, const Tensor& probs, bool verbatim) {
    if (!target_onehot.same_shape(probs)) throw ShapeError("seg_loss: target/prob shape mismatch");
    if (probs.dim() < 3) throw ShapeError("seg_loss expects [B, I, spatial...]");
    const int64_t B = probs.shape()[0], I = probs.shape()[1];
    const int64_t sp = probs.numel() / (B * I);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t s = 0; s < sp; ++s) {
            double sum = 0.0;
            for (int64_t i = 0; i < I; ++i) {
                const double pv = probs[(b * I + i) * sp + s];
                if (pv < 0.0) throw ValueError("seg_loss: negative probability");
                sum += pv;
            }
            if (std::abs(sum - 1.0) > 1e-9)
                throw ValueError("seg_loss: voxel probabilities sum to " + std::to_string(sum));
        }
    return composite_loss_terms(target_onehot, probs, verbatim).value;
}

ad::Var seg_loss(const ad::Var& logits, const Tensor& target_onehot, bool verbatim) {
    const Tensor& z = logits.value();
    if (!z.same_shape(target_onehot)) throw ShapeError("seg_loss: target/logit shape mismatch");
    if (z.dim() < 3) throw ShapeError("seg_loss expects [B, I, spatial...]");
    const int64_t B = z.shape()[0], I = z.shape()[1];
    const int64_t sp = z.numel() / (B * I);
    const int64_t V = B * sp;

    // softmax over the class axis
    auto probs = std::make_shared<Tensor>(z.shape(), z.layout());
    for (int64_t b = 0; b < B; ++b)
        for (int64_t s = 0; s < sp; ++s) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int64_t i = 0; i < I; ++i) mx = std::max(mx, z[(b * I + i) * sp + s]);
            double denom = 0.0;
            for (int64_t i = 0; i < I; ++i) denom += std::exp(z[(b * I + i) * sp + s] - mx);
            for (int64_t i = 0; i < I; ++i)
                (*probs)[(b * I + i) * sp + s] = std::exp(z[(b * I + i) * sp + s] - mx) / denom;
        }

    auto target = std::make_shared<Tensor>(target_onehot);
    LossTerms terms = composite_loss_terms(*target, *probs, verbatim);
    Tensor out({1});
    out[0] = terms.value;

    ad::NodeRef zn = logits.node();
    const double dice_scale = verbatim ? 1.0 : 1.0 / static_cast<double>(I);
    const double ce_scale = verbatim ? 1.0 : 1.0 / static_cast<double>(V);
    auto backprop = [zn, probs, target, terms, B, I, sp, dice_scale, ce_scale](ad::GraphNode& self) {
        if (!zn->requires_grad) return;
        const double g = self.grad[0];
        Tensor gz(zn->value.shape(), zn->value.layout());
        for (int64_t b = 0; b < B; ++b)
            for (int64_t s = 0; s < sp; ++s) {
                // dL/dP then pull back through the softmax
                double dot = 0.0;
                std::vector<double> dlp(static_cast<size_t>(I));
                for (int64_t i = 0; i < I; ++i) {
                    const int64_t idx = (b * I + i) * sp + s;
                    const double yv = (*target)[idx], pv = (*probs)[idx];
                    const double S = terms.sum_yp[static_cast<size_t>(i)];
                    const double D = terms.sum_sq[static_cast<size_t>(i)];
                    double d = -dice_scale * (2.0 * yv / D - 4.0 * S * pv / (D * D));
                    if (yv != 0.0) d -= ce_scale * yv / pv;
                    dlp[static_cast<size_t>(i)] = d;
                    dot += d * pv;
                }
                for (int64_t i = 0; i < I; ++i) {
                    const int64_t idx = (b * I + i) * sp + s;
                    gz[idx] = g * (*probs)[idx] * (dlp[static_cast<size_t>(i)] - dot);
                }
            }
        zn->accumulate(gz);
    };
    auto node = std::make_shared<ad::GraphNode>();
    node->op = "seg_loss";
    node->value = std::move(out);
    node->parents = {zn};
    node->requires_grad = zn->requires_grad;
    if (node->requires_grad) node->backprop = backprop;
    return ad::Var(std::move(node));
}

std::vector<LabelVolume> argmax_labels(const Tensor& logits) {
    if (logits.dim() != 5) throw ShapeError("argmax_labels expects [B, I, D, H, W]");
    const int64_t B = logits.shape()[0], I = logits.shape()[1];
    const int64_t sp = logits.numel() / (B * I);
    std::vector<LabelVolume> out(static_cast<size_t>(B));
    for (int64_t b = 0; b < B; ++b) {
        LabelVolume& lv = out[static_cast<size_t>(b)];
        lv.extents = {logits.shape()[2], logits.shape()[3], logits.shape()[4]};
        lv.classes = I;
        lv.ids.resize(static_cast<size_t>(sp));
        for (int64_t s = 0; s < sp; ++s) {
            int64_t best = 0;
            for (int64_t i = 1; i < I; ++i)
                if (logits[(b * I + i) * sp + s] > logits[(b * I + best) * sp + s]) best = i;
            lv.ids[static_cast<size_t>(s)] = static_cast<int32_t>(best);
        }
    }
    return out;
}

double mean_foreground_dice(const Tensor& logits, const std::vector<LabelVolume>& targets) {
    const std::vector<LabelVolume> preds = argmax_labels(logits);
    if (preds.size() != targets.size()) throw ShapeError("dice: batch size mismatch");
    const int64_t I = targets.front().classes;
    double total = 0.0;
    for (int32_t c = 1; c < I; ++c) {
        // pool counts over the batch
        int64_t ny = 0, np = 0, ni = 0;
        for (size_t b = 0; b < targets.size(); ++b) {
            for (size_t i = 0; i < targets[b].ids.size(); ++i) {
                const bool y = targets[b].ids[i] == c;
                const bool p = preds[b].ids[i] == c;
                ny += y;
                np += p;
                ni += y && p;
            }
        }
        total += (ny + np == 0) ? 1.0 : 2.0 * static_cast<double>(ni) / static_cast<double>(ny + np);
    }
    return total / static_cast<double>(I - 1);
}

// ---------------------------------------------------------------------------
// synthetic task

BlobTask make_blob_task(const std::array<int64_t, 3>& extents, int64_t classes, uint64_t seed) {
    for (int64_t e : extents)
        if (e < 8) throw ValueError("blob task extents must be >= 8 per axis");
    if (classes < 2) throw ValueError("blob task needs at least 2 classes");

    Rng rng(seed);
    const int64_t sp = extents[0] * extents[1] * extents[2];

    BlobTask task;
    task.labels.extents = extents;
    task.labels.classes = classes;

    for (int attempt = 0; attempt < 64; ++attempt) {
        task.labels.ids.assign(static_cast<size_t>(sp), 0);
        task.blobs.clear();
        for (int32_t c = 1; c < classes; ++c) {
            const int64_t blobs = 1 + rng.below(3);
            for (int64_t n = 0; n < blobs; ++n) {
                BlobTask::Blob blob;
                blob.cls = c;
                for (int a = 0; a < 3; ++a) {
                    const double ext = static_cast<double>(extents[static_cast<size_t>(a)]);
                    blob.radii[static_cast<size_t>(a)] = rng.uniform(ext / 6.0, ext / 3.0);
                    // keep the ellipsoid fully inside the grid
                    const double margin = blob.radii[static_cast<size_t>(a)];
                    blob.center[static_cast<size_t>(a)] = rng.uniform(margin, ext - margin);
                }
                task.blobs.push_back(blob);
                for (int64_t z = 0; z < extents[0]; ++z)
                    for (int64_t y = 0; y < extents[1]; ++y)
                        for (int64_t x = 0; x < extents[2]; ++x) {
                            const double dz = (static_cast<double>(z) - blob.center[0]) / blob.radii[0];
                            const double dy = (static_cast<double>(y) - blob.center[1]) / blob.radii[1];
                            const double dx = (static_cast<double>(x) - blob.center[2]) / blob.radii[2];
                            if (dz * dz + dy * dy + dx * dx <= 1.0)
                                task.labels.ids[static_cast<size_t>((z * extents[1] + y) * extents[2] + x)] = c;
                        }
            }
        }
        std::vector<bool> present(static_cast<size_t>(classes), false);
        for (int32_t id : task.labels.ids) present[static_cast<size_t>(id)] = true;
        if (std::all_of(present.begin(), present.end(), [](bool b) { return b; })) {
            task.volume = Tensor({1, 1, extents[0], extents[1], extents[2]}, "BCDHW");
            for (int64_t s = 0; s < sp; ++s) {
                const int32_t c = task.labels.ids[static_cast<size_t>(s)];
                const double base = -1.0 + 2.0 * static_cast<double>(c) / static_cast<double>(classes - 1);
                task.volume[s] = base + rng.uniform(-0.1, 0.1);
            }
            return task;
        }
    }
    throw ValueError("blob task generation failed: could not place every class (extents too small?)");
}

}  // namespace lcnet
