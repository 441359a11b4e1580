#pragma once

// Synthetic quadruped scenes with ground truth, PCA feature reduction,
// evaluation metrics and dataset files.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "quadbank/bank.hpp"
#include "quadbank/fit.hpp"
#include "quadbank/geometry.hpp"
#include "quadbank/render.hpp"
#include "quadbank/skeleton.hpp"

namespace quadbank::harness {

using geometry::Mesh;
using geometry::Vec3;
using geometry::VertexField;

inline constexpr std::size_t kRawFeatureDim = 64;
inline constexpr std::size_t kFeatureDim = 16;
inline constexpr std::size_t kNumKeypoints = 11;

class HarnessError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Part : int { Body = 0, Head = 1, Tail = 2, FrontLeg = 3, BackLeg = 4 };
inline constexpr std::size_t kNumParts = 5;

struct SynthSpec {
    double body_length = 2.6;  // z
    double body_width = 1.2;   // x
    double body_height = 0.8;  // y
    double leg_length = 1.8;
    double leg_radius = 0.15;
    bool neck = true;
    bool tail = true;
    /// Fewer subdivisions (under 200 vertices).
    bool coarse = false;
    /// x rotation of every lower leg bone (front legs +, back legs -).
    double leg_bend_deg = 0.0;
    /// Camera elevation of every view.
    double elevation_deg = 0.0;
    std::size_t views = 8;
    /// Fraction of views drawn from [-45, 45] degrees of azimuth; the rest
    /// are uniform on [0, 360).
    double frontal_bias = 0.0;
    /// Evenly spaced azimuths instead of random draws (bias ignored).
    bool even_azimuths = false;
    /// Explicit azimuths in degrees; when non-empty they replace the draws
    /// and set the view count.
    std::vector<double> azimuths;
    double image_noise = 0.0;
    double feature_noise = 0.0;
    std::uint64_t seed = 1;

    void validate() const;
};

nlohmann::json to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const nlohmann::json& j);

struct SynthScene {
    Mesh mesh;                     // rest pose, canonical frame, centred on its bounding box
    std::vector<Part> part;        // per vertex
    skeleton::Skeleton skeleton;   // from instantiate_quadruped on the rest mesh
    skeleton::SkinWeights weights;
    skeleton::Pose pose;           // ground-truth articulation (identity rigid part)
    VertexField raw_features;      // kRawFeatureDim per vertex
    VertexField albedo;            // rgb in [0, 1]
    /// Vertex standing in for each keypoint: feet, knees (FL, FR, BL, BR
    /// order), spine front, spine back, centroid.
    std::array<std::size_t, kNumKeypoints> keypoint_vertex{};
};

const char* keypoint_name(std::size_t k);

/// Box body with optional head and tail, four cylinder legs. Bilaterally
/// symmetric; canonical features are a fixed (seed-independent) random map
/// of bounding-box-normalized (|x|, y, z) and the part label.
SynthScene synth_quadruped(const SynthSpec& spec);

/// Raw canonical features of arbitrary vertices (normalized by `mesh`'s
/// bounding box).
VertexField canonical_features(const Mesh& mesh, const std::vector<Part>& part);

struct PcaResult {
    Eigen::VectorXd mean;            // D
    Eigen::MatrixXd components;      // out_dim x D, orthonormal rows
    Eigen::VectorXd explained;       // variance along each component
    Eigen::MatrixXd reduced;         // S x out_dim

    Eigen::MatrixXd apply(const Eigen::MatrixXd& samples) const;
    Eigen::MatrixXd reconstruct(const Eigen::MatrixXd& reduced) const;
};

/// Principal components of the rows of `samples` (S x D). Components beyond
/// the data rank complete an orthonormal set. Each component's
/// largest-magnitude entry is made positive.
PcaResult pca_reduce(const Eigen::MatrixXd& samples, std::size_t out_dim = kFeatureDim);

struct KeypointSet {
    std::vector<std::array<double, 2>> xy;  // pixel coordinates
    std::vector<bool> visible;
};

struct View {
    double azimuth_deg = 0;
    double elevation_deg = 0;
    skeleton::Pose pose;        // ground truth: articulation plus view rotation
    std::vector<double> mask;   // H*W
    std::vector<double> image;  // H*W x 3
    std::vector<double> features;  // H*W x kFeatureDim
    KeypointSet keypoints;
};

struct ViewSet {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<View> views;
    PcaResult pca;  // raw -> kFeatureDim, fitted on covered pixels of all views
};

/// Rotation of the canonical model seen from `azimuth` (about +y) and
/// `elevation` (about +x), in degrees.
Eigen::Matrix3d view_rotation(double azimuth_deg, double elevation_deg);

/// Azimuths for `n` views: `bias` of them in [-45, 45], the rest uniform.
std::vector<double> sample_azimuths(std::size_t n, double bias, std::uint64_t seed);

/// Renders every view with the hard rasterizer on `jobs` threads (0 = all
/// cores). Output does not depend on `jobs`.
ViewSet generate_views(const SynthScene& scene, const SynthSpec& spec, const render::Camera& cam, unsigned jobs = 0);

/// The scene posed for one view, in camera-world coordinates.
Mesh posed_mesh(const SynthScene& scene, const skeleton::Pose& pose);

/// Per-vertex raw features reduced by `pca` (kFeatureDim columns).
VertexField reduced_features(const VertexField& raw, const PcaResult& pca);

/// Unit key-space vector from a fixed random projection of the view's mean
/// feature over its mask and its coverage fraction.
bank::ImageEmbedding image_embedding(const View& view, std::size_t key_dim = bank::kKeyDim);

fit::Target make_target(const View& view, std::size_t key_dim = bank::kKeyDim);

// ---------------------------------------------------------------------------
// Metrics

/// Intersection over union of the masks thresholded at 0.5; 1 when both are empty.
double eval_iou(const std::vector<double>& pred, const std::vector<double>& target);

/// Projected vertices of a posed reconstruction and their visibility.
struct Reconstruction {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::array<double, 2>> xy;
    std::vector<bool> visible;
};

/// A vertex is visible when some pixel within 1.5 px of its projection has
/// z-buffer depth not in front of the vertex (relative tolerance 1e-3).
Reconstruction make_reconstruction(const Mesh& posed, const render::Camera& cam);

/// Source keypoint -> nearest visible source vertex -> that vertex in the
/// target image; correct within threshold * max(W, H). Keypoints invisible
/// in either image are not counted. Returns NaN when nothing is counted.
double eval_keypoint_transfer(const Reconstruction& source, const Reconstruction& target, const KeypointSet& source_kps,
                              const KeypointSet& target_kps, double threshold = 0.1);

/// Per-keypoint linear maps from projected vertices (shared across `train`,
/// minimum-norm least squares), scored on `eval`.
double eval_pck_linear(const std::vector<Reconstruction>& train, const std::vector<KeypointSet>& train_kps,
                       const std::vector<Reconstruction>& eval, const std::vector<KeypointSet>& eval_kps,
                       double threshold = 0.1);
double eval_pck_linear(const std::vector<Reconstruction>& recons, const std::vector<KeypointSet>& kps,
                       double threshold = 0.1);

// ---------------------------------------------------------------------------
// Gradient checks

struct GradientTerm {
    std::string name;
    ad::FiniteDiffReport report;
};

/// Analytic against central-difference gradients of every loss and
/// regularizer term, the soft silhouette, shading and skinning, evaluated on
/// a small perturbed synthetic scene (32 x 32, coarse mesh). At most
/// `max_coords` coordinates per parameter tensor are probed.
std::vector<GradientTerm> gradient_suite(std::uint64_t seed = 1, std::size_t max_coords = 64);

// ---------------------------------------------------------------------------
// Files

/// Directory layout: views.json (camera, azimuths, poses, keypoints),
/// mask_<i>.png, image_<i>.png, features_<i>.fts (H x W x 16), pca.json,
/// plus scene.obj and skeleton.json when a scene is given.
void save_dataset(const ViewSet& views, const render::Camera& cam, const std::filesystem::path& dir,
                  const SynthScene* scene = nullptr);

struct Dataset {
    render::Camera camera;
    ViewSet views;
};
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace quadbank::harness
