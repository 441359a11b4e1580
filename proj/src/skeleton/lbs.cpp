#include "quadbank/skeleton.hpp"

#include <cmath>

namespace quadbank::skeleton {
namespace {

using RowMat3 = Eigen::Matrix<double, 3, 3, Eigen::RowMajor>;

Mat3 rot_x(double a) {
    Mat3 r;
    r << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
    return r;
}
Mat3 rot_y(double a) {
    Mat3 r;
    r << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
    return r;
}
Mat3 rot_z(double a) {
    Mat3 r;
    r << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
    return r;
}
// Derivatives of the axis rotations with respect to the angle.
Mat3 drot_x(double a) {
    Mat3 r;
    r << 0, 0, 0, 0, -std::sin(a), -std::cos(a), 0, std::cos(a), -std::sin(a);
    return r;
}
Mat3 drot_y(double a) {
    Mat3 r;
    r << -std::sin(a), 0, std::cos(a), 0, 0, 0, -std::cos(a), 0, -std::sin(a);
    return r;
}
Mat3 drot_z(double a) {
    Mat3 r;
    r << -std::sin(a), -std::cos(a), 0, std::cos(a), -std::sin(a), 0, 0, 0, 0;
    return r;
}

Mat3 read_mat(const double* p) { return Eigen::Map<const RowMat3>(p); }
void add_mat(double* p, const Mat3& m) { Eigen::Map<RowMat3>(p) += m; }

Vec3 parent_head(const Skeleton& skel, int parent) {
    return parent < 0 ? Vec3::Zero() : skel.bones[static_cast<std::size_t>(parent)].head;
}

struct Chain {
    std::vector<Mat3> GR;  // world rotation of each bone frame
    std::vector<Vec3> Gt;  // world origin of each bone frame
};

Chain forward_chain(const Skeleton& skel, const Mat3& R, const Vec3& t, const std::vector<Mat3>& local) {
    Chain c;
    c.GR.resize(skel.size());
    c.Gt.resize(skel.size());
    for (std::size_t b = 0; b < skel.size(); ++b) {
        const int p = skel.bones[b].parent;
        const Mat3& pR = p < 0 ? R : c.GR[static_cast<std::size_t>(p)];
        const Vec3& pt = p < 0 ? t : c.Gt[static_cast<std::size_t>(p)];
        c.GR[b] = pR * local[b];
        c.Gt[b] = pR * (skel.bones[b].head - parent_head(skel, p)) + pt;
    }
    return c;
}

}  // namespace

Mat3 euler_xyz(const Vec3& a) { return rot_x(a.x()) * rot_y(a.y()) * rot_z(a.z()); }

std::vector<std::pair<Mat3, Vec3>> bone_transforms(const Skeleton& skel, const Mat3& root_rotation,
                                                   const Vec3& translation, const std::vector<Mat3>& local) {
    if (local.size() != skel.size()) throw SkeletonError("bone_transforms: one local rotation per bone required");
    const Chain c = forward_chain(skel, root_rotation, translation, local);
    std::vector<std::pair<Mat3, Vec3>> out(skel.size());
    for (std::size_t b = 0; b < skel.size(); ++b) out[b] = {c.GR[b], c.Gt[b] - c.GR[b] * skel.bones[b].head};
    return out;
}

geometry::Mesh lbs_pose(const geometry::Mesh& mesh, const Skeleton& skel, const SkinWeights& weights,
                        const Pose& pose) {
    if (weights.num_vertices != mesh.num_vertices() || weights.num_bones != skel.size() ||
        pose.joint_angles.size() != skel.size()) {
        throw SkeletonError("lbs_pose: mesh, weights, skeleton and pose disagree in size");
    }
    std::vector<Mat3> local(skel.size());
    for (std::size_t b = 0; b < skel.size(); ++b) local[b] = euler_xyz(pose.joint_angles[b]);
    const auto A = bone_transforms(skel, pose.rotation.normalized().toRotationMatrix(), pose.translation, local);
    geometry::Mesh out = mesh;
    for (std::size_t i = 0; i < mesh.num_vertices(); ++i) {
        Mat3 M = Mat3::Zero();
        Vec3 m = Vec3::Zero();
        for (std::size_t b = 0; b < skel.size(); ++b) {
            const double w = weights(i, b);
            if (w == 0.0) continue;
            M += w * A[b].first;
            m += w * A[b].second;
        }
        out.vertices[i] = M * mesh.vertices[i] + m;
    }
    return out;
}

ad::Var euler_rotations(const ad::Var& angles) {
    const ad::Tensor& av = angles.value();
    if (av.size() % 3 != 0) throw SkeletonError("euler_rotations: expected (B x 3) angles");
    const std::size_t nb = av.size() / 3;
    ad::Tensor out({nb, 9});
    for (std::size_t b = 0; b < nb; ++b) {
        Eigen::Map<RowMat3>(out.data.data() + 9 * b) = euler_xyz(Vec3(av[3 * b], av[3 * b + 1], av[3 * b + 2]));
    }
    return angles.tape()->custom(std::move(out), {angles}, [angles, nb](ad::Tape& t, std::span<const double> g) {
        const ad::Tensor& av = t.value(angles);
        std::vector<double> ga(3 * nb);
        for (std::size_t b = 0; b < nb; ++b) {
            const double x = av[3 * b], y = av[3 * b + 1], z = av[3 * b + 2];
            const Mat3 G = read_mat(g.data() + 9 * b);
            const Mat3 rx = rot_x(x), ry = rot_y(y), rz = rot_z(z);
            ga[3 * b] = (drot_x(x) * ry * rz).cwiseProduct(G).sum();
            ga[3 * b + 1] = (rx * drot_y(y) * rz).cwiseProduct(G).sum();
            ga[3 * b + 2] = (rx * ry * drot_z(z)).cwiseProduct(G).sum();
        }
        t.accumulate(angles, ga);
    });
}

ad::Var axis_rotation(const ad::Var& angle, int axis) {
    if (angle.size() != 1 || axis < 0 || axis > 2) throw SkeletonError("axis_rotation: scalar angle and axis 0..2 required");
    auto rot = [axis](double a) { return axis == 0 ? rot_x(a) : axis == 1 ? rot_y(a) : rot_z(a); };
    auto drot = [axis](double a) { return axis == 0 ? drot_x(a) : axis == 1 ? drot_y(a) : drot_z(a); };
    ad::Tensor out({3, 3});
    Eigen::Map<RowMat3>(out.data.data()) = rot(angle.item());
    return angle.tape()->custom(std::move(out), {angle}, [angle, drot](ad::Tape& t, std::span<const double> g) {
        t.accumulate_at(angle, 0, drot(t.value(angle)[0]).cwiseProduct(read_mat(g.data())).sum());
    });
}

ad::Var rigid_transform(const ad::Var& vertices, const ad::Var& rotation, const ad::Var& translation) {
    return ad::add_rowvec(ad::matmul(vertices, ad::transpose(rotation)), translation);
}

ad::Var lbs(const ad::Var& vertices, const Skeleton& skel, const SkinWeights& weights, const ad::Var& rotation,
            const ad::Var& translation, const ad::Var& local_rotations) {
    const std::size_t n = vertices.size() / 3;
    const std::size_t nb = skel.size();
    if (vertices.size() != 3 * n || weights.num_vertices != n || weights.num_bones != nb ||
        rotation.size() != 9 || translation.size() != 3 || local_rotations.size() != 9 * nb) {
        throw SkeletonError("lbs: operand sizes disagree");
    }
    const ad::Tensor& lv = local_rotations.value();
    std::vector<Mat3> local(nb);
    for (std::size_t b = 0; b < nb; ++b) local[b] = read_mat(lv.data.data() + 9 * b);
    const Mat3 R = read_mat(rotation.value().data.data());
    const Vec3 t(translation.value()[0], translation.value()[1], translation.value()[2]);
    const Chain chain = forward_chain(skel, R, t, local);

    std::vector<Mat3> AR(nb);
    std::vector<Vec3> At(nb);
    for (std::size_t b = 0; b < nb; ++b) {
        AR[b] = chain.GR[b];
        At[b] = chain.Gt[b] - chain.GR[b] * skel.bones[b].head;
    }
    const ad::Tensor& vv = vertices.value();
    ad::Tensor out({n, 3});
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 v(vv[3 * i], vv[3 * i + 1], vv[3 * i + 2]);
        Vec3 acc = Vec3::Zero();
        for (std::size_t b = 0; b < nb; ++b) {
            const double w = weights(i, b);
            if (w != 0.0) acc += w * (AR[b] * v + At[b]);
        }
        out[3 * i] = acc.x();
        out[3 * i + 1] = acc.y();
        out[3 * i + 2] = acc.z();
    }

    return vertices.tape()->custom(
        std::move(out), {vertices, rotation, translation, local_rotations},
        [vertices, rotation, translation, local_rotations, skel, weights, local, R, chain, AR](
            ad::Tape& tp, std::span<const double> g) {
            const std::size_t n = weights.num_vertices;
            const std::size_t nb = weights.num_bones;
            const ad::Tensor& vv = tp.value(vertices);
            std::vector<Mat3> dAR(nb, Mat3::Zero());
            std::vector<Vec3> dAt(nb, Vec3::Zero());
            std::vector<double> gv(3 * n, 0.0);
            const bool want_v = tp.requires_grad(vertices);
            for (std::size_t i = 0; i < n; ++i) {
                const Vec3 gi(g[3 * i], g[3 * i + 1], g[3 * i + 2]);
                const Vec3 v(vv[3 * i], vv[3 * i + 1], vv[3 * i + 2]);
                Vec3 dv = Vec3::Zero();
                for (std::size_t b = 0; b < nb; ++b) {
                    const double w = weights(i, b);
                    if (w == 0.0) continue;
                    dAR[b] += w * gi * v.transpose();
                    dAt[b] += w * gi;
                    if (want_v) dv += w * AR[b].transpose() * gi;
                }
                gv[3 * i] = dv.x();
                gv[3 * i + 1] = dv.y();
                gv[3 * i + 2] = dv.z();
            }
            if (want_v) tp.accumulate(vertices, gv);

            std::vector<Mat3> dGR(nb);
            std::vector<Vec3> dGt(nb);
            for (std::size_t b = 0; b < nb; ++b) {
                dGR[b] = dAR[b] - dAt[b] * skel.bones[b].head.transpose();
                dGt[b] = dAt[b];
            }
            Mat3 dR = Mat3::Zero();
            Vec3 dt = Vec3::Zero();
            std::vector<double> gl(9 * nb, 0.0);
            for (std::size_t bi = nb; bi-- > 0;) {
                const int p = skel.bones[bi].parent;
                const Mat3& pR = p < 0 ? R : chain.GR[static_cast<std::size_t>(p)];
                const Vec3 offset = skel.bones[bi].head - parent_head(skel, p);
                add_mat(gl.data() + 9 * bi, pR.transpose() * dGR[bi]);
                const Mat3 to_parent_R = dGR[bi] * local[bi].transpose() + dGt[bi] * offset.transpose();
                if (p < 0) {
                    dR += to_parent_R;
                    dt += dGt[bi];
                } else {
                    dGR[static_cast<std::size_t>(p)] += to_parent_R;
                    dGt[static_cast<std::size_t>(p)] += dGt[bi];
                }
            }
            if (tp.requires_grad(local_rotations)) tp.accumulate(local_rotations, gl);
            if (tp.requires_grad(rotation)) {
                std::vector<double> gr(9, 0.0);
                add_mat(gr.data(), dR);
                tp.accumulate(rotation, gr);
            }
            if (tp.requires_grad(translation)) tp.accumulate(translation, std::vector<double>{dt.x(), dt.y(), dt.z()});
        });
}

ad::Var art_regularizer(const ad::Var& angles) {
    const std::size_t nb = angles.size() / 3;
    if (nb == 0) return angles.tape()->constant(0.0);
    return ad::mul_scalar(ad::sum(ad::square(angles)), 1.0 / static_cast<double>(nb));
}

}  // namespace quadbank::skeleton
