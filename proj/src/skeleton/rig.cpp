#include "quadbank/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <nlohmann/json.hpp>

namespace quadbank::skeleton {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double deg(double d) { return d * std::numbers::pi / 180.0; }

// Mean of the vertices attaining the extreme of `key` (within `tol`).
template <class Key>
Vec3 extreme_mean(const std::vector<Vec3>& pts, Key key, double tol) {
    double best = -kInf;
    for (const Vec3& p : pts) best = std::max(best, key(p));
    Vec3 acc = Vec3::Zero();
    int n = 0;
    for (const Vec3& p : pts) {
        if (key(p) >= best - tol) {
            acc += p;
            ++n;
        }
    }
    return acc / n;
}

}  // namespace

const char* role_name(BoneRole role) {
    switch (role) {
        case BoneRole::spine: return "spine";
        case BoneRole::leg_upper: return "leg_upper";
        case BoneRole::leg_middle: return "leg_middle";
        case BoneRole::leg_lower: return "leg_lower";
        case BoneRole::generic: break;
    }
    return "generic";
}

const char* quadrant_name(Quadrant q) {
    switch (q) {
        case Quadrant::front_left: return "front-left";
        case Quadrant::front_right: return "front-right";
        case Quadrant::back_left: return "back-left";
        case Quadrant::back_right: return "back-right";
    }
    return "?";
}

void Skeleton::validate() const {
    for (std::size_t b = 0; b < bones.size(); ++b) {
        const Bone& bone = bones[b];
        if (bone.parent < -1 || bone.parent >= static_cast<int>(b)) {
            throw SkeletonError("bone " + std::to_string(b) + " has parent " + std::to_string(bone.parent) +
                                " that does not precede it");
        }
        if (!bone.head.allFinite() || !bone.tail.allFinite()) {
            throw SkeletonError("bone " + std::to_string(b) + " has a non-finite joint");
        }
    }
}

Pose Pose::rest(std::size_t num_bones) {
    Pose p;
    p.joint_angles.assign(num_bones, Vec3::Zero());
    return p;
}

Skeleton instantiate_quadruped(const geometry::Mesh& mesh) {
    const auto& V = mesh.vertices;
    if (V.empty()) throw SkeletonError("instantiate_quadruped: empty mesh");

    Vec3 lo = V[0], hi = V[0], center = Vec3::Zero();
    for (const Vec3& v : V) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
        center += v;
    }
    center /= static_cast<double>(V.size());
    const double height = hi.y() - lo.y();
    const double length = hi.z() - lo.z();
    if (!(height > 0) || !(length > 0)) throw SkeletonError("instantiate_quadruped: mesh has no extent along y or z");
    const double tol = 1e-9 * (hi - lo).norm();

    Skeleton skel;
    // Spine joints: 0 = center, 1..4 toward the front extreme, 5..8 toward the back.
    std::vector<Vec3> spine_joints{center};
    std::vector<int> joint_bone{-1};  // bone whose tail is the joint
    const Vec3 front = extreme_mean(V, [](const Vec3& p) { return p.z(); }, tol);
    const Vec3 back = extreme_mean(V, [](const Vec3& p) { return -p.z(); }, tol);
    for (const Vec3& end : {front, back}) {
        int parent = -1;
        for (std::size_t k = 0; k < 4; ++k) {
            Bone bone;
            bone.parent = parent;
            bone.head = center + (end - center) * (static_cast<double>(k) / 4.0);
            bone.tail = center + (end - center) * (static_cast<double>(k + 1) / 4.0);
            bone.role = BoneRole::spine;
            parent = static_cast<int>(skel.bones.size());
            skel.bones.push_back(bone);
            spine_joints.push_back(bone.tail);
            joint_bone.push_back(parent);
        }
    }

    const double cutoff = lo.y() + 0.4 * height;
    std::vector<Vec3> low;
    Eigen::Vector2d origin = Eigen::Vector2d::Zero();
    for (const Vec3& v : V) {
        if (v.y() < cutoff) {
            low.push_back(v);
            origin += Eigen::Vector2d(v.x(), v.z());
        }
    }
    if (!low.empty()) origin /= static_cast<double>(low.size());

    for (int q = 0; q < 4; ++q) {
        const Quadrant quad = static_cast<Quadrant>(q);
        const bool want_front = quad == Quadrant::front_left || quad == Quadrant::front_right;
        const bool want_left = quad == Quadrant::front_left || quad == Quadrant::back_left;
        std::vector<Vec3> members;
        for (const Vec3& v : low) {
            const double dx = v.x() - origin.x();
            const double dz = v.z() - origin.y();
            if (std::abs(dx) <= tol || std::abs(dz) <= tol) continue;
            if ((dz > 0) == want_front && (dx > 0) == want_left) members.push_back(v);
        }
        if (members.empty()) throw SkeletonError(std::string("missing leg: no low vertices in the ") + quadrant_name(quad) + " quadrant");
        const Vec3 foot = extreme_mean(members, [](const Vec3& p) { return -p.y(); }, tol);

        std::size_t nearest = 0;
        for (std::size_t j = 1; j < spine_joints.size(); ++j) {
            if ((spine_joints[j] - foot).squaredNorm() < (spine_joints[nearest] - foot).squaredNorm()) nearest = j;
        }
        const Vec3 root = spine_joints[nearest];
        int parent = joint_bone[nearest];
        const BoneRole roles[3] = {BoneRole::leg_upper, BoneRole::leg_middle, BoneRole::leg_lower};
        for (std::size_t k = 0; k < kBonesPerLeg; ++k) {
            Bone bone;
            bone.parent = parent;
            bone.head = root + (foot - root) * (static_cast<double>(k) / 3.0);
            bone.tail = k + 1 == kBonesPerLeg ? foot : Vec3(root + (foot - root) * (static_cast<double>(k + 1) / 3.0));
            bone.role = roles[k];
            parent = static_cast<int>(skel.bones.size());
            skel.bones.push_back(bone);
        }
    }
    return skel;
}

double point_segment_sqdist(const Vec3& p, const Vec3& a, const Vec3& b) {
    const Vec3 ab = b - a;
    const double len2 = ab.squaredNorm();
    if (len2 == 0.0) return (p - a).squaredNorm();
    const double r = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
    return (p - (a + r * ab)).squaredNorm();
}

SkinWeights skinning_weights(const geometry::Mesh& mesh, const Skeleton& skel, double tau_s) {
    if (!(tau_s > 0)) throw SkeletonError("skinning temperature must be positive");
    if (skel.bones.empty()) throw SkeletonError("skinning_weights: skeleton has no bones");
    const std::size_t n = mesh.num_vertices();
    const std::size_t nb = skel.size();
    SkinWeights sw{n, nb, std::vector<double>(n * nb)};
    std::vector<double> logits(nb);
    for (std::size_t i = 0; i < n; ++i) {
        double top = -kInf;
        for (std::size_t b = 0; b < nb; ++b) {
            logits[b] = -point_segment_sqdist(mesh.vertices[i], skel.bones[b].head, skel.bones[b].tail) / tau_s;
            top = std::max(top, logits[b]);
        }
        double total = 0.0;
        for (std::size_t b = 0; b < nb; ++b) {
            logits[b] = std::exp(logits[b] - top);
            total += logits[b];
        }
        for (std::size_t b = 0; b < nb; ++b) sw.w[i * nb + b] = logits[b] / total;
    }
    return sw;
}

AngleLimits unlimited(std::size_t num_bones) {
    return {std::vector<Vec3>(num_bones, Vec3::Constant(-kInf)), std::vector<Vec3>(num_bones, Vec3::Constant(kInf))};
}

AngleLimits quadruped_limits(const Skeleton& skel) {
    AngleLimits lim = unlimited(skel.size());
    for (std::size_t b = 0; b < skel.size(); ++b) {
        switch (skel.bones[b].role) {
            case BoneRole::spine:
                lim.min[b].z() = -deg(6);
                lim.max[b].z() = deg(6);
                break;
            case BoneRole::leg_upper:
                lim.min[b].tail<2>().setConstant(-deg(10));
                lim.max[b].tail<2>().setConstant(deg(10));
                break;
            case BoneRole::leg_middle:
            case BoneRole::leg_lower:
                lim.min[b].tail<2>().setZero();
                lim.max[b].tail<2>().setZero();
                break;
            case BoneRole::generic: break;
        }
    }
    return lim;
}

void clamp_angles_in_place(std::span<double> angles, const AngleLimits& limits) {
    if (angles.size() != 3 * limits.min.size()) throw SkeletonError("clamp_angles: bone count mismatch");
    for (std::size_t b = 0; b < limits.min.size(); ++b) {
        for (int a = 0; a < 3; ++a) {
            double& v = angles[3 * b + a];
            v = std::clamp(v, limits.min[b][a], limits.max[b][a]);
        }
    }
}

Pose clamp_angles(const Pose& pose, const AngleLimits& limits) {
    Pose out = pose;
    std::vector<double> flat;
    for (const Vec3& a : pose.joint_angles) flat.insert(flat.end(), a.data(), a.data() + 3);
    clamp_angles_in_place(flat, limits);
    for (std::size_t b = 0; b < out.joint_angles.size(); ++b) out.joint_angles[b] = Vec3(flat[3 * b], flat[3 * b + 1], flat[3 * b + 2]);
    return out;
}

double art_regularizer(const Pose& pose) {
    if (pose.joint_angles.empty()) return 0.0;
    double s = 0.0;
    for (const Vec3& a : pose.joint_angles) s += a.squaredNorm();
    return s / static_cast<double>(pose.joint_angles.size());
}

nlohmann::json to_json(const Skeleton& skel) {
    nlohmann::json bones = nlohmann::json::array();
    for (const Bone& b : skel.bones) {
        bones.push_back({{"parent", b.parent},
                         {"head", {b.head.x(), b.head.y(), b.head.z()}},
                         {"tail", {b.tail.x(), b.tail.y(), b.tail.z()}},
                         {"role", role_name(b.role)}});
    }
    return {{"bones", bones}};
}

Skeleton skeleton_from_json(const nlohmann::json& j) {
    Skeleton skel;
    try {
        for (const auto& jb : j.at("bones")) {
            Bone b;
            b.parent = jb.at("parent").get<int>();
            const auto head = jb.at("head").get<std::vector<double>>();
            const auto tail = jb.at("tail").get<std::vector<double>>();
            if (head.size() != 3 || tail.size() != 3) throw SkeletonError("bone joints must have 3 coordinates");
            b.head = Vec3(head[0], head[1], head[2]);
            b.tail = Vec3(tail[0], tail[1], tail[2]);
            const std::string role = jb.value("role", "generic");
            for (BoneRole r : {BoneRole::spine, BoneRole::leg_upper, BoneRole::leg_middle, BoneRole::leg_lower}) {
                if (role == role_name(r)) b.role = r;
            }
            skel.bones.push_back(b);
        }
    } catch (const nlohmann::json::exception& e) {
        throw SkeletonError(std::string("bad skeleton JSON: ") + e.what());
    }
    skel.validate();
    return skel;
}

nlohmann::json to_json(const Pose& pose) {
    const auto& q = pose.rotation;
    nlohmann::json angles = nlohmann::json::array();
    for (const Vec3& a : pose.joint_angles) angles.push_back({a.x(), a.y(), a.z()});
    return {{"rotation", {q.w(), q.x(), q.y(), q.z()}},
            {"translation", {pose.translation.x(), pose.translation.y(), pose.translation.z()}},
            {"joint_angles", angles}};
}

Pose pose_from_json(const nlohmann::json& j) {
    Pose pose;
    try {
        const auto q = j.at("rotation").get<std::vector<double>>();
        const auto t = j.at("translation").get<std::vector<double>>();
        if (q.size() != 4 || t.size() != 3) throw SkeletonError("pose needs a 4-entry rotation and 3-entry translation");
        pose.rotation = Eigen::Quaterniond(q[0], q[1], q[2], q[3]);
        if (!(pose.rotation.norm() > 0)) throw SkeletonError("pose rotation must be nonzero");
        pose.rotation.normalize();
        pose.translation = Vec3(t[0], t[1], t[2]);
        for (const auto& ja : j.at("joint_angles")) {
            const auto a = ja.get<std::vector<double>>();
            if (a.size() != 3) throw SkeletonError("joint angles must have 3 entries");
            pose.joint_angles.emplace_back(a[0], a[1], a[2]);
        }
    } catch (const nlohmann::json::exception& e) {
        throw SkeletonError(std::string("bad pose JSON: ") + e.what());
    }
    return pose;
}

}  // namespace quadbank::skeleton
