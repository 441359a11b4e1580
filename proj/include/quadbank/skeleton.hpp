#pragma once

// Quadruped skeleton, softmax-over-distance skinning weights and linear
// blend skinning.
//
// Bone indexing: the rigid transform is the implicit root; articulated bones
// are 0-based here (0..7 spine, 8..19 legs). Every bone rotates about its
// head joint, expressed in a frame that is world-aligned at rest.

#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <nlohmann/json_fwd.hpp>

#include "quadbank/autodiff.hpp"
#include "quadbank/geometry.hpp"

namespace quadbank::skeleton {

using geometry::Vec3;
using Mat3 = Eigen::Matrix3d;

inline constexpr std::size_t kSpineBones = 8;
inline constexpr std::size_t kBonesPerLeg = 3;
inline constexpr std::size_t kQuadrupedBones = kSpineBones + 4 * kBonesPerLeg;
inline constexpr double kDefaultSkinTemperature = 0.5;

class SkeletonError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class BoneRole { generic, spine, leg_upper, leg_middle, leg_lower };

const char* role_name(BoneRole role);

/// Legs in the order they are emitted.
enum class Quadrant { front_left, front_right, back_left, back_right };

const char* quadrant_name(Quadrant q);

struct Bone {
    int parent = -1;  // -1: attached directly to the rigid root transform
    Vec3 head;        // parent-side joint, the rotation pivot
    Vec3 tail;
    BoneRole role = BoneRole::generic;
};

struct Skeleton {
    std::vector<Bone> bones;

    std::size_t size() const { return bones.size(); }
    /// Throws SkeletonError unless every parent precedes its child.
    void validate() const;
    /// Index of the lower leg bone for each quadrant (quadruped only).
    std::size_t foot_bone(Quadrant q) const { return kSpineBones + static_cast<std::size_t>(q) * kBonesPerLeg + 2; }
};

/// Rigid transform plus intrinsic-XYZ Euler angles (radians) per bone.
struct Pose {
    Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
    Vec3 translation = Vec3::Zero();
    std::vector<Vec3> joint_angles;

    static Pose rest(std::size_t num_bones);
};

/// Row-major (N x B) weights; each row nonnegative, summing to 1.
struct SkinWeights {
    std::size_t num_vertices = 0;
    std::size_t num_bones = 0;
    std::vector<double> w;

    double operator()(std::size_t i, std::size_t b) const { return w[i * num_bones + b]; }
    ad::Tensor tensor() const { return ad::Tensor({num_vertices, num_bones}, w); }
};

struct AngleLimits {
    std::vector<Vec3> min;
    std::vector<Vec3> max;
};

/// Spine of 8 equal bones through the centroid to the z-extremes, and three
/// equal bones per leg from each foot to its nearest spine joint.
Skeleton instantiate_quadruped(const geometry::Mesh& mesh);

/// min over r in [0,1] of |p - (r a + (1 - r) b)|^2.
double point_segment_sqdist(const Vec3& p, const Vec3& a, const Vec3& b);

SkinWeights skinning_weights(const geometry::Mesh& mesh, const Skeleton& skel,
                             double tau_s = kDefaultSkinTemperature);

Mat3 euler_xyz(const Vec3& angles);

/// Poses `mesh` by blending G_b(pose) G_b(rest)^-1 with `weights`.
geometry::Mesh lbs_pose(const geometry::Mesh& mesh, const Skeleton& skel, const SkinWeights& weights,
                        const Pose& pose);

/// Per-bone world transforms G_b(pose) G_b(rest)^-1 as (R, t) pairs.
std::vector<std::pair<Mat3, Vec3>> bone_transforms(const Skeleton& skel, const Mat3& root_rotation,
                                                   const Vec3& translation, const std::vector<Mat3>& local);

/// Limits for a quadruped: lower two leg segments have y/z frozen, the upper
/// segment allows +-10 degrees in y/z, spine bones +-6 degrees in z. X is free.
AngleLimits quadruped_limits(const Skeleton& skel);
AngleLimits unlimited(std::size_t num_bones);

Pose clamp_angles(const Pose& pose, const AngleLimits& limits);
void clamp_angles_in_place(std::span<double> angles, const AngleLimits& limits);

/// Mean squared Euler-vector norm over articulated bones.
double art_regularizer(const Pose& pose);

// Differentiable counterparts --------------------------------------------

/// (B x 3) Euler angles -> (B x 9) row-major rotation matrices.
ad::Var euler_rotations(const ad::Var& angles);

/// Rotation by a size-1 angle about a coordinate axis (0 = x, 1 = y, 2 = z),
/// as a (3 x 3) matrix.
ad::Var axis_rotation(const ad::Var& angle, int axis);

/// Rigid transform of (N x 3) vertices: v R^T + t.
ad::Var rigid_transform(const ad::Var& vertices, const ad::Var& rotation, const ad::Var& translation);

/// Linear blend skinning of (N x 3) rest vertices. `rotation` is (3 x 3),
/// `translation` (3), `local_rotations` (B x 9) from euler_rotations.
ad::Var lbs(const ad::Var& vertices, const Skeleton& skel, const SkinWeights& weights, const ad::Var& rotation,
            const ad::Var& translation, const ad::Var& local_rotations);

/// (1/B) sum_b |angles_b|^2 over a (B x 3) tensor.
ad::Var art_regularizer(const ad::Var& angles);

nlohmann::json to_json(const Skeleton& skel);
Skeleton skeleton_from_json(const nlohmann::json& j);

/// {"rotation": [w, x, y, z], "translation": [3], "joint_angles": [[3], ...]}.
nlohmann::json to_json(const Pose& pose);
Pose pose_from_json(const nlohmann::json& j);

}  // namespace quadbank::skeleton
