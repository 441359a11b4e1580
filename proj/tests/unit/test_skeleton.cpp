#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "quadbank/skeleton.hpp"

using namespace quadbank;
using geometry::Mesh;
using geometry::Vec3;
using skeleton::Quadrant;

namespace {

std::vector<double> linspace(double a, double b, int n) {
    std::vector<double> v;
    for (int i = 0; i < n; ++i) v.push_back(a + (b - a) * i / (n - 1));
    return v;
}

// Point-set quadruped: a box body standing on four cylinders. Only vertex
// positions matter for rigging.
Mesh quadruped_points(double length = 2.0, double width = 0.8, double body_h = 0.6, double leg = 1.0,
                      double front_leg_z = 0.7, double back_leg_z = -0.7, double body_z0 = -1.0) {
    Mesh m;
    for (double x : linspace(-width / 2, width / 2, 5))
        for (double y : linspace(leg, leg + body_h, 4))
            for (double z : linspace(body_z0, body_z0 + length, 9)) m.vertices.emplace_back(x, y, z);
    for (double lx : {0.35 * width, -0.35 * width}) {
        for (double lz : {front_leg_z, back_leg_z}) {
            for (double y : linspace(0, leg, 6)) {
                for (int k = 0; k < 6; ++k) {
                    const double a = 2 * std::numbers::pi * k / 6;
                    m.vertices.emplace_back(lx + 0.08 * std::cos(a), y, lz + 0.08 * std::sin(a));
                }
            }
        }
    }
    return m;
}

std::vector<std::vector<double>> rows(const skeleton::SkinWeights& w) {
    std::vector<std::vector<double>> r(w.num_vertices, std::vector<double>(w.num_bones));
    for (std::size_t i = 0; i < w.num_vertices; ++i)
        for (std::size_t b = 0; b < w.num_bones; ++b) r[i][b] = w(i, b);
    return r;
}

skeleton::Pose random_pose(std::size_t nb, std::uint64_t seed, double scale = 0.4) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0, scale);
    skeleton::Pose p = skeleton::Pose::rest(nb);
    for (auto& a : p.joint_angles) a = Vec3(g(rng), g(rng), g(rng));
    p.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(g(rng) * 3, Vec3(g(rng), g(rng), g(rng)).normalized()));
    p.translation = Vec3(g(rng), g(rng), g(rng));
    return p;
}

}  // namespace

TEST_CASE("box-bodied quadruped gets 20 bones with spine ends at the z extremes") {
    const Mesh m = quadruped_points();
    const auto sk = skeleton::instantiate_quadruped(m);
    REQUIRE(sk.size() == skeleton::kQuadrupedBones);
    sk.validate();
    CHECK(sk.bones[3].tail.z() == doctest::Approx(1.0));
    CHECK(sk.bones[7].tail.z() == doctest::Approx(-1.0));
    CHECK(sk.bones[0].head == sk.bones[4].head);
    const double seg = (sk.bones[0].tail - sk.bones[0].head).norm();
    for (std::size_t b = 0; b < 8; ++b) CHECK((sk.bones[b].tail - sk.bones[b].head).norm() == doctest::Approx(seg));
    for (int q = 0; q < 4; ++q) {
        const auto& lower = sk.bones[sk.foot_bone(static_cast<Quadrant>(q))];
        const double lx = q % 2 == 0 ? 0.28 : -0.28;
        const double lz = q < 2 ? 0.7 : -0.7;
        CHECK((lower.tail - Vec3(lx, 0, lz)).norm() < 1e-12);
        const std::size_t up = skeleton::kSpineBones + 3 * static_cast<std::size_t>(q);
        const double leg_seg = (sk.bones[up].tail - sk.bones[up].head).norm();
        for (std::size_t k = 0; k < 3; ++k) {
            CHECK((sk.bones[up + k].tail - sk.bones[up + k].head).norm() == doctest::Approx(leg_seg));
            CHECK(sk.bones[up + k].parent == (k == 0 ? sk.bones[up].parent : static_cast<int>(up + k - 1)));
        }
        // The leg hangs off the nearest spine joint.
        double best = 1e9;
        for (std::size_t b = 0; b < 8; ++b) best = std::min(best, (sk.bones[b].tail - lower.tail).norm());
        best = std::min(best, (sk.bones[0].head - lower.tail).norm());
        CHECK((sk.bones[up].head - lower.tail).norm() == doctest::Approx(best));
    }
}

TEST_CASE("instantiation is mirror equivariant with left and right legs swapped") {
    const Mesh m = quadruped_points(2.0, 0.8, 0.6, 1.0, 0.6, -0.8);
    const auto a = skeleton::instantiate_quadruped(m);
    const auto b = skeleton::instantiate_quadruped(geometry::mirrored(m));
    auto flip = [](Vec3 v) { return Vec3(-v.x(), v.y(), v.z()); };
    for (std::size_t i = 0; i < 8; ++i) CHECK((flip(a.bones[i].tail) - b.bones[i].tail).norm() < 1e-12);
    const int swap[4] = {1, 0, 3, 2};
    for (int q = 0; q < 4; ++q) {
        for (std::size_t k = 0; k < 3; ++k) {
            const auto& ba = a.bones[8 + 3 * q + k];
            const auto& bb = b.bones[8 + 3 * swap[q] + k];
            CHECK((flip(ba.head) - bb.head).norm() < 1e-12);
            CHECK((flip(ba.tail) - bb.tail).norm() < 1e-12);
            const int pa = ba.parent < 8 ? ba.parent : 8 + 3 * swap[(ba.parent - 8) / 3] + (ba.parent - 8) % 3;
            CHECK(pa == bb.parent);
        }
    }
}

TEST_CASE("instantiation is equivariant to uniform scaling") {
    const Mesh m = quadruped_points();
    Mesh s = m;
    for (auto& v : s.vertices) v *= 2.5;
    const auto a = skeleton::instantiate_quadruped(m);
    const auto b = skeleton::instantiate_quadruped(s);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.bones[i].parent == b.bones[i].parent);
        CHECK((a.bones[i].head * 2.5 - b.bones[i].head).norm() < 1e-12);
        CHECK((a.bones[i].tail * 2.5 - b.bones[i].tail).norm() < 1e-12);
    }
}

TEST_CASE("feet are found from the low-vertex centroid, not the body centre") {
    // A long body extending far forward drags the mesh centroid ahead of both
    // leg pairs; quadrants around the low-vertex centroid still split them.
    const Mesh m = quadruped_points(5.0, 0.8, 0.6, 1.0, -0.2, -0.9, -1.0);
    Eigen::Vector3d centroid = Vec3::Zero();
    for (const auto& v : m.vertices) centroid += v;
    centroid /= static_cast<double>(m.num_vertices());
    REQUIRE(centroid.z() > -0.2);
    const auto sk = skeleton::instantiate_quadruped(m);
    std::vector<Vec3> feet;
    for (int q = 0; q < 4; ++q) feet.push_back(sk.bones[sk.foot_bone(static_cast<Quadrant>(q))].tail);
    CHECK((feet[0] - Vec3(0.28, 0, -0.2)).norm() < 1e-12);
    CHECK((feet[1] - Vec3(-0.28, 0, -0.2)).norm() < 1e-12);
    CHECK((feet[2] - Vec3(0.28, 0, -0.9)).norm() < 1e-12);
    CHECK((feet[3] - Vec3(-0.28, 0, -0.9)).norm() < 1e-12);
}

TEST_CASE("a quadrant without low vertices is reported as a missing leg") {
    Mesh m = quadruped_points();
    std::erase_if(m.vertices, [](const Vec3& v) { return v.y() < 1.0 && v.x() < 0 && v.z() < 0; });
    try {
        skeleton::instantiate_quadruped(m);
        FAIL("expected an error");
    } catch (const skeleton::SkeletonError& e) {
        const std::string what = e.what();
        CHECK(what.find("missing leg") != std::string::npos);
        CHECK(what.find("back-right") != std::string::npos);
    }
    Mesh flat;
    flat.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0)};
    CHECK_THROWS_AS(skeleton::instantiate_quadruped(flat), skeleton::SkeletonError);
}

TEST_CASE("point to segment squared distance") {
    CHECK(skeleton::point_segment_sqdist({0, 0, 0}, {1, 0, 0}, {1, 1, 0}) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(skeleton::point_segment_sqdist({0, 2, 0}, {-1, 0, 0}, {1, 0, 0}) == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(skeleton::point_segment_sqdist({0.3, 0, 0}, {-1, 0, 0}, {1, 0, 0}) < 1e-30);
    CHECK(skeleton::point_segment_sqdist({1, 2, 2}, {0, 0, 0}, {0, 0, 0}) == 9.0);
    CHECK(oracle::segment_sqdist_sampled({0, 0, 0}, {1, 0, 0}, {1, 1, 0}) == doctest::Approx(1.0).epsilon(1e-8));
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-2, 2);
    for (int i = 0; i < 20; ++i) {
        const Vec3 p(u(rng), u(rng), u(rng)), a(u(rng), u(rng), u(rng)), b(u(rng), u(rng), u(rng));
        CHECK(std::abs(skeleton::point_segment_sqdist(p, a, b) - oracle::segment_sqdist_sampled(p, a, b)) < 1e-8);
    }
}

TEST_CASE("skinning weights") {
    SUBCASE("equidistant from two bones, far from the rest") {
        skeleton::Skeleton sk;
        sk.bones = {{-1, {-1, 0, 0}, {-1, 1, 0}}, {-1, {1, 0, 0}, {1, 1, 0}}, {-1, {50, 0, 0}, {50, 1, 0}}};
        Mesh m;
        m.vertices = {Vec3(0, 0.5, 0)};
        const auto w = skeleton::skinning_weights(m, sk);
        CHECK(std::abs(w(0, 0) - 0.5) < 1e-6);
        CHECK(std::abs(w(0, 1) - 0.5) < 1e-6);
    }
    SUBCASE("small temperature picks the nearest bone") {
        const Mesh m = quadruped_points();
        const auto sk = skeleton::instantiate_quadruped(m);
        const auto w = skeleton::skinning_weights(m, sk, 1e-3);
        int checked = 0;
        for (std::size_t i = 0; i < m.num_vertices(); ++i) {
            std::vector<double> d;
            for (const auto& b : sk.bones) d.push_back(skeleton::point_segment_sqdist(m.vertices[i], b.head, b.tail));
            auto sorted = d;
            std::sort(sorted.begin(), sorted.end());
            if (sorted[1] - sorted[0] < 0.01) continue;  // too close to call
            const auto nearest = static_cast<std::size_t>(std::min_element(d.begin(), d.end()) - d.begin());
            CHECK(w(i, nearest) > 0.999);
            ++checked;
        }
        CHECK(checked > 100);
    }
    SUBCASE("single bone") {
        skeleton::Skeleton sk;
        sk.bones = {{-1, {0, 0, 0}, {0, 1, 0}}};
        const auto w = skeleton::skinning_weights(quadruped_points(), sk);
        for (double v : w.w) CHECK(v == 1.0);
    }
    SUBCASE("rows sum to one, nearest bone is the row max, relabeling permutes columns") {
        const Mesh m = quadruped_points();
        const auto sk = skeleton::instantiate_quadruped(m);
        const auto w = skeleton::skinning_weights(m, sk);
        skeleton::Skeleton rev;
        for (std::size_t b = sk.size(); b-- > 0;) rev.bones.push_back({-1, sk.bones[b].head, sk.bones[b].tail});
        const auto wr = skeleton::skinning_weights(m, rev);
        for (std::size_t i = 0; i < m.num_vertices(); ++i) {
            double total = 0, dmin = 1e9, wmax = 0;
            std::size_t nearest = 0;
            for (std::size_t b = 0; b < sk.size(); ++b) {
                CHECK(w(i, b) >= 0.0);
                total += w(i, b);
                const double d = skeleton::point_segment_sqdist(m.vertices[i], sk.bones[b].head, sk.bones[b].tail);
                if (d < dmin) {
                    dmin = d;
                    nearest = b;
                }
                wmax = std::max(wmax, w(i, b));
                CHECK(std::abs(w(i, b) - wr(i, sk.size() - 1 - b)) < 1e-15);
            }
            CHECK(std::abs(total - 1.0) < 1e-9);
            CHECK(w(i, nearest) == wmax);
        }
    }
}

TEST_CASE("euler angles compose as intrinsic XYZ") {
    const Vec3 a(0.3, -0.7, 1.1);
    const Eigen::Matrix3d ref = (Eigen::AngleAxisd(a.x(), Vec3::UnitX()) * Eigen::AngleAxisd(a.y(), Vec3::UnitY()) *
                                 Eigen::AngleAxisd(a.z(), Vec3::UnitZ()))
                                    .toRotationMatrix();
    CHECK((skeleton::euler_xyz(a) - ref).norm() < 1e-15);
}

TEST_CASE("LBS at rest is the identity; rigid pose is an isometry") {
    const Mesh m = quadruped_points();
    const auto sk = skeleton::instantiate_quadruped(m);
    const auto w = skeleton::skinning_weights(m, sk);
    const Mesh rest = skeleton::lbs_pose(m, sk, w, skeleton::Pose::rest(sk.size()));
    for (std::size_t i = 0; i < m.num_vertices(); ++i)
        for (int c = 0; c < 3; ++c) CHECK(std::abs(rest.vertices[i][c] - m.vertices[i][c]) <= 1e-12);

    skeleton::Pose rigid = skeleton::Pose::rest(sk.size());
    rigid.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(1.2, Vec3(1, 2, 3).normalized()));
    rigid.translation = Vec3(0.3, -0.2, 0.9);
    const Mesh moved = skeleton::lbs_pose(m, sk, w, rigid);
    for (std::size_t i = 0; i < m.num_vertices(); i += 7)
        for (std::size_t j = i + 1; j < m.num_vertices(); j += 13)
            CHECK(std::abs((moved.vertices[i] - moved.vertices[j]).norm() - (m.vertices[i] - m.vertices[j]).norm()) < 1e-9);
}

TEST_CASE("rotating a terminal leg bone moves only its vertices, rigidly about the head") {
    const Mesh m = quadruped_points();
    const auto sk = skeleton::instantiate_quadruped(m);
    const auto w = skeleton::skinning_weights(m, sk, 1e-3);
    const std::size_t b = sk.foot_bone(Quadrant::front_left);
    skeleton::Pose p = skeleton::Pose::rest(sk.size());
    p.joint_angles[b] = Vec3(std::numbers::pi / 2, 0, 0);
    const Mesh out = skeleton::lbs_pose(m, sk, w, p);
    const Eigen::Matrix3d r = skeleton::euler_xyz(p.joint_angles[b]);
    int bound = 0, free = 0;
    for (std::size_t i = 0; i < m.num_vertices(); ++i) {
        if (w(i, b) > 0.99) {
            const Vec3 expect = sk.bones[b].head + r * (m.vertices[i] - sk.bones[b].head);
            CHECK((out.vertices[i] - expect).norm() < 1e-6);
            ++bound;
        } else if (w(i, b) < 1e-3) {
            CHECK((out.vertices[i] - m.vertices[i]).norm() < 1e-3);
            ++free;
        }
    }
    CHECK(bound > 0);
    CHECK(free > 0);
}

TEST_CASE("LBS agrees with the homogeneous-matrix oracle on random poses") {
    const Mesh m = quadruped_points();
    const auto sk = skeleton::instantiate_quadruped(m);
    const auto w = skeleton::skinning_weights(m, sk);
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto pose = random_pose(sk.size(), seed);
        const Mesh out = skeleton::lbs_pose(m, sk, w, pose);
        const auto ref = oracle::lbs_homogeneous(m, sk, rows(w), pose);
        for (std::size_t i = 0; i < m.num_vertices(); ++i) CHECK((out.vertices[i] - ref[i]).norm() < 1e-10);
    }
}

TEST_CASE("differentiable LBS matches lbs_pose and finite differences") {
    Mesh m = quadruped_points();
    // Thin the point set to keep the check fast.
    Mesh thin;
    for (std::size_t i = 0; i < m.num_vertices(); i += 3) thin.vertices.push_back(m.vertices[i]);
    const auto sk = skeleton::instantiate_quadruped(m);
    const auto w = skeleton::skinning_weights(thin, sk);
    const auto pose = random_pose(sk.size(), 5, 0.3);

    ad::Tensor angles({sk.size(), 3});
    for (std::size_t b = 0; b < sk.size(); ++b)
        for (int c = 0; c < 3; ++c) angles[3 * b + c] = pose.joint_angles[b][c];
    const Eigen::Matrix3d R = pose.rotation.toRotationMatrix();
    ad::Tensor rot({3, 3});
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) rot[3 * r + c] = R(r, c);
    const ad::Tensor trans({3}, std::vector<double>{pose.translation.x(), pose.translation.y(), pose.translation.z()});

    ad::Tape t;
    const ad::Tensor out = skeleton::lbs(t.constant(thin.vertex_tensor()), sk, w, t.constant(rot), t.constant(trans),
                                         skeleton::euler_rotations(t.constant(angles)))
                               .value();
    const Mesh ref = skeleton::lbs_pose(thin, sk, w, pose);
    for (std::size_t i = 0; i < thin.num_vertices(); ++i)
        for (int c = 0; c < 3; ++c) CHECK(out[3 * i + c] == doctest::Approx(ref.vertices[i][c]).epsilon(1e-12));

    std::mt19937_64 rng(3);
    ad::Tensor probe({thin.num_vertices(), 3});
    for (double& v : probe.data) v = std::normal_distribution<double>(0, 0.01)(rng);
    ad::ScalarFn f = [&](ad::Tape&, const std::vector<ad::Var>& p) {
        return ad::sum(ad::mul_const(skeleton::lbs(p[0], sk, w, p[1], p[2], skeleton::euler_rotations(p[3])), probe));
    };
    const auto rep = ad::finite_diff_check(f, {thin.vertex_tensor(), rot, trans, angles});
    CHECK(rep.checked > 0);
    CHECK(rep.max_rel_error < 1e-6);
}

TEST_CASE("axis rotation and rigid transform ops") {
    ad::ScalarFn f = [](ad::Tape& t, const std::vector<ad::Var>& p) {
        ad::Var r = ad::matmul(skeleton::axis_rotation(p[0], 1), skeleton::axis_rotation(p[1], 0));
        ad::Var v = skeleton::rigid_transform(p[2], r, p[3]);
        return ad::mul_scalar(ad::sum(ad::square(v)), 0.05);
    };
    const auto rep = ad::finite_diff_check(
        f, {ad::Tensor::scalar(0.4), ad::Tensor::scalar(-1.1), ad::Tensor({2, 3}, std::vector<double>{1, 2, 3, -1, 0.5, 0}),
            ad::Tensor({3}, std::vector<double>{0.1, 0.2, -0.3})});
    CHECK(rep.max_rel_error < 1e-7);

    ad::Tape t;
    const ad::Tensor r = skeleton::axis_rotation(t.constant(0.7), 2).value();
    const Eigen::Matrix3d ref = skeleton::euler_xyz(Vec3(0, 0, 0.7));
    for (int i = 0; i < 9; ++i) CHECK(r[i] == doctest::Approx(ref(i / 3, i % 3)).epsilon(1e-15));
}

TEST_CASE("clamp_angles applies the quadruped limits") {
    const auto sk = skeleton::instantiate_quadruped(quadruped_points());
    const auto lim = skeleton::quadruped_limits(sk);
    skeleton::Pose p = skeleton::Pose::rest(sk.size());
    const std::size_t lower = sk.foot_bone(Quadrant::back_left);
    const std::size_t upper = lower - 2;
    p.joint_angles[lower] = Vec3(0.3, 0.2, -0.1);
    p.joint_angles[upper] = Vec3(2.0, 0.5, -0.05);
    p.joint_angles[2] = Vec3(1.0, 1.0, -0.5);
    const auto c = skeleton::clamp_angles(p, lim);
    CHECK(c.joint_angles[lower] == Vec3(0.3, 0, 0));
    CHECK(c.joint_angles[upper].x() == 2.0);
    CHECK(c.joint_angles[upper].y() == doctest::Approx(0.17453).epsilon(1e-4));
    CHECK(c.joint_angles[upper].z() == -0.05);
    CHECK(c.joint_angles[2].x() == 1.0);
    CHECK(c.joint_angles[2].y() == 1.0);
    CHECK(c.joint_angles[2].z() == doctest::Approx(-6 * std::numbers::pi / 180));
}

TEST_CASE("clamp_angles is an idempotent projection") {
    const auto sk = skeleton::instantiate_quadruped(quadruped_points());
    const auto lim = skeleton::quadruped_limits(sk);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto p = random_pose(sk.size(), seed, 0.5);
        const auto c1 = skeleton::clamp_angles(p, lim);
        const auto c2 = skeleton::clamp_angles(c1, lim);
        for (std::size_t b = 0; b < sk.size(); ++b) {
            CHECK(c1.joint_angles[b] == c2.joint_angles[b]);
            for (int a = 0; a < 3; ++a) CHECK(std::abs(c1.joint_angles[b][a]) <= std::abs(p.joint_angles[b][a]));
        }
    }
    const auto inside = skeleton::clamp_angles(skeleton::Pose::rest(sk.size()), lim);
    for (const auto& a : inside.joint_angles) CHECK(a == Vec3::Zero());
}

TEST_CASE("articulation regularizer") {
    CHECK(skeleton::art_regularizer(skeleton::Pose::rest(20)) == 0.0);
    skeleton::Pose p = skeleton::Pose::rest(20);
    for (auto& a : p.joint_angles) a = Vec3(0.1, 0, 0);
    CHECK(skeleton::art_regularizer(p) == doctest::Approx(0.01).epsilon(1e-14));
    const auto r = random_pose(20, 4);
    double s = 0;
    for (std::size_t b = 0; b < 20; ++b)
        for (int c = 0; c < 3; ++c) s += r.joint_angles[b][c] * r.joint_angles[b][c];
    CHECK(skeleton::art_regularizer(r) == doctest::Approx(s / 20).epsilon(1e-14));

    ad::Tensor ang({20, 3});
    for (std::size_t b = 0; b < 20; ++b)
        for (int c = 0; c < 3; ++c) ang[3 * b + c] = r.joint_angles[b][c];
    ad::Tape t;
    CHECK(skeleton::art_regularizer(t.constant(ang)).item() == doctest::Approx(s / 20).epsilon(1e-14));
    ad::ScalarFn f = [](ad::Tape&, const std::vector<ad::Var>& v) { return skeleton::art_regularizer(v[0]); };
    CHECK(ad::finite_diff_check(f, {ang}).max_rel_error < 1e-8);
}

TEST_CASE("skeleton JSON round trip and validation") {
    const auto sk = skeleton::instantiate_quadruped(quadruped_points());
    const auto j = skeleton::to_json(sk);
    const auto back = skeleton::skeleton_from_json(nlohmann::json::parse(j.dump()));
    REQUIRE(back.size() == sk.size());
    for (std::size_t b = 0; b < sk.size(); ++b) {
        CHECK(back.bones[b].parent == sk.bones[b].parent);
        CHECK(back.bones[b].head == sk.bones[b].head);
        CHECK(back.bones[b].tail == sk.bones[b].tail);
        CHECK(back.bones[b].role == sk.bones[b].role);
    }
    auto bad = j;
    bad["bones"][0]["parent"] = 3;
    CHECK_THROWS_AS(skeleton::skeleton_from_json(bad), skeleton::SkeletonError);
}
