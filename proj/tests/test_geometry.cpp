#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "mdb/data.hpp"
#include "mdb/geometry.hpp"

using namespace mdb;

namespace {

CameraModel pinhole(double f, double cx, double cy, int w, int h) {
  CameraModel cam;
  cam.fx = cam.fy = f;
  cam.cx = cx;
  cam.cy = cy;
  cam.image_width = w;
  cam.image_height = h;
  return cam;
}

// axis-angle rotation, independent of the library's camera math
Mat3 rodrigues(Vec3 axis, double angle) {
  double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
  for (auto& a : axis) a /= n;
  double c = std::cos(angle), s = std::sin(angle), t = 1 - c;
  return Mat3{{{t * axis[0] * axis[0] + c, t * axis[0] * axis[1] - s * axis[2],
                t * axis[0] * axis[2] + s * axis[1]},
               {t * axis[0] * axis[1] + s * axis[2], t * axis[1] * axis[1] + c,
                t * axis[1] * axis[2] - s * axis[0]},
               {t * axis[0] * axis[2] - s * axis[1], t * axis[1] * axis[2] + s * axis[0],
                t * axis[2] * axis[2] + c}}};
}

// independent restatement of the per-voxel classification rule
VoxelState oracle_classify(const CameraModel& cam, const DepthMap& depth,
                           const GridSpec& spec, int x, int y, int z) {
  Vec3 c = spec.voxel_center(x, y, z);
  double qx = cam.rotation[0][0] * c[0] + cam.rotation[0][1] * c[1] +
              cam.rotation[0][2] * c[2] + cam.translation[0];
  double qy = cam.rotation[1][0] * c[0] + cam.rotation[1][1] * c[1] +
              cam.rotation[1][2] * c[2] + cam.translation[1];
  double qz = cam.rotation[2][0] * c[0] + cam.rotation[2][1] * c[1] +
              cam.rotation[2][2] * c[2] + cam.translation[2];
  if (qz <= 0) return VoxelState::OutsideFrustum;
  long ui = std::lround(cam.fx * qx / qz + cam.cx);
  long vi = std::lround(cam.fy * qy / qz + cam.cy);
  if (ui < 0 || ui >= depth.width || vi < 0 || vi >= depth.height)
    return VoxelState::OutsideFrustum;
  float d = depth.at(static_cast<int>(ui), static_cast<int>(vi));
  if (d <= 0.0f) return VoxelState::OutsideFrustum;
  if (std::abs(qz - d) <= spec.voxel_size) return VoxelState::Surface;
  return qz < d ? VoxelState::VisibleEmpty : VoxelState::Occluded;
}

}  // namespace

TEST_CASE("project_point on the principal axis") {
  CameraModel cam = CameraModel::identity();
  PixelProjection p = project_point(cam, {0, 0, 1});
  CHECK(p.u == doctest::Approx(0.0));
  CHECK(p.v == doctest::Approx(0.0));
  CHECK(p.depth == doctest::Approx(1.0));
}

TEST_CASE("project_point matches the hand pinhole oracle") {
  CameraModel cam = pinhole(100, 320, 240, 640, 480);
  PixelProjection p = project_point(cam, {2, 1, 2});
  CHECK(p.u == doctest::Approx(420.0).epsilon(1e-12));
  CHECK(p.v == doctest::Approx(290.0).epsilon(1e-12));
  CHECK(p.depth == doctest::Approx(2.0).epsilon(1e-12));

  Rng rng(11);
  for (int i = 0; i < 50; ++i) {
    Vec3 pt{rng.uniform(-3, 3), rng.uniform(-2, 2), rng.uniform(0.5, 6)};
    PixelProjection q = project_point(cam, pt);
    CHECK(q.u == doctest::Approx(cam.fx * pt[0] / pt[2] + cam.cx).epsilon(1e-12));
    CHECK(q.v == doctest::Approx(cam.fy * pt[1] / pt[2] + cam.cy).epsilon(1e-12));
  }
}

TEST_CASE("project_point rejects points behind the camera") {
  CameraModel cam = CameraModel::identity();
  CHECK_THROWS_WITH_AS(project_point(cam, {0, 0, -1}), doctest::Contains("behind"), Error);
  try {
    project_point(cam, {0, 0, -1});
  } catch (const Error& e) {
    CHECK(e.code() == Err::NonPositiveDepth);
  }
}

TEST_CASE("backproject_pixel inverts the pinhole oracle") {
  CameraModel cam = CameraModel::identity();
  Vec3 p = backproject_pixel(cam, 0, 0, 1);
  CHECK(p[0] == doctest::Approx(0.0));
  CHECK(p[2] == doctest::Approx(1.0));

  CameraModel cam2 = pinhole(100, 320, 240, 640, 480);
  Vec3 q = backproject_pixel(cam2, 420, 290, 2);
  CHECK(q[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(q[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(q[2] == doctest::Approx(2.0).epsilon(1e-12));

  CHECK_THROWS_AS(backproject_pixel(cam, 0, 0, 0.0), Error);
  CHECK_THROWS_AS(backproject_pixel(cam, 0, 0, -2.0), Error);
}

TEST_CASE("projection round-trip for rotated cameras") {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    CameraModel cam = pinhole(55, 32, 24, 64, 48);
    cam.rotation = rodrigues({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)},
                             rng.uniform(-1.5, 1.5));
    cam.translation = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    cam.validate();
    for (int i = 0; i < 100; ++i) {
      double u = rng.uniform(0, 63), v = rng.uniform(0, 47);
      double depth = rng.uniform(0.2, 8.0);
      Vec3 p = backproject_pixel(cam, u, v, depth);
      PixelProjection proj = project_point(cam, p);
      CHECK(std::abs(proj.u - u) < 1e-6);
      CHECK(std::abs(proj.v - v) < 1e-6);
      CHECK(std::abs(proj.depth - depth) < 1e-6);
    }
  }
}

TEST_CASE("camera validation rejects bad rotations") {
  CameraModel cam = CameraModel::identity();
  cam.rotation[0][0] = 1.1;
  CHECK_THROWS_AS(cam.validate(), Error);
}

TEST_CASE("classify_voxels spec examples") {
  // camera at origin looking +z, constant 1m depth
  CameraModel cam = pinhole(30, 16, 12, 32, 24);
  DepthMap depth(32, 24, 1.0f);
  GridSpec spec;
  spec.dims = {1, 1, 8};
  spec.origin = {-0.05, -0.05, 0.0};
  spec.voxel_size = 0.1;
  spec.truncation = 0.3;

  VisibilityGrid vis = classify_voxels(cam, depth, spec);
  CHECK(vis.at(0, 0, 4) == VoxelState::VisibleEmpty);  // z = 0.45 < 1
  GridSpec spec2 = spec;
  spec2.dims = {1, 1, 16};  // deep enough to reach occluded space
  VisibilityGrid vis2 = classify_voxels(cam, depth, spec2);
  CHECK(vis2.at(0, 0, 4) == VoxelState::VisibleEmpty);   // 0.45 < 1
  CHECK(vis2.at(0, 0, 15) == VoxelState::Occluded);      // 1.55 > 1 + 0.1
  CHECK(vis2.at(0, 0, 9) == VoxelState::Surface);        // 0.95, within voxel_size
}

TEST_CASE("classify_voxels marks missing depth as outside the frustum") {
  CameraModel cam = pinhole(30, 16, 12, 32, 24);
  DepthMap depth(32, 24, 0.0f);  // all missing
  GridSpec spec;
  spec.dims = {2, 2, 4};
  spec.origin = {-0.1, -0.1, 0.0};
  spec.voxel_size = 0.1;
  spec.truncation = 0.3;
  VisibilityGrid vis = classify_voxels(cam, depth, spec);
  for (VoxelState s : vis.states) CHECK(s == VoxelState::OutsideFrustum);
}

TEST_CASE("classify_voxels rejects mismatched dimensions") {
  CameraModel cam = pinhole(30, 16, 12, 32, 24);
  DepthMap depth(16, 12, 1.0f);
  CHECK_THROWS_AS(classify_voxels(cam, depth, GridSpec::desk_scale()), Error);
}

TEST_CASE("classify_voxels equals the brute-force oracle on random scenes") {
  Rng rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    SyntheticSceneSpec sspec;
    sspec.grid.dims = {16, 12, 16};
    sspec.grid.voxel_size = 0.3;
    sspec.grid.truncation = 0.9;
    sspec.image_width = 40;
    sspec.image_height = 30;
    sspec.focal = 32.0;
    sspec.shell_thickness = 1;
    GeneratedScene scene = generate_scene(sspec, 100 + trial);
    const Sample& s = scene.sample;
    VisibilityGrid vis = classify_voxels(s.camera, s.depth, s.grid);
    for (int x = 0; x < s.grid.dims[0]; ++x)
      for (int y = 0; y < s.grid.dims[1]; ++y)
        for (int z = 0; z < s.grid.dims[2]; ++z)
          REQUIRE(vis.at(x, y, z) == oracle_classify(s.camera, s.depth, s.grid, x, y, z));
  }
}

TEST_CASE("occluded fraction matches a per-voxel ray oracle on a single-box scene") {
  SyntheticSceneSpec sspec;
  sspec.grid.dims = {16, 12, 16};
  sspec.grid.voxel_size = 0.3;
  sspec.grid.truncation = 0.9;
  sspec.image_width = 40;
  sspec.image_height = 30;
  sspec.focal = 32.0;
  sspec.shell_thickness = 1;
  sspec.min_objects = sspec.max_objects = 1;
  sspec.object_classes = {6};
  GeneratedScene scene = generate_scene(sspec, 5);
  const Sample& s = scene.sample;

  VisibilityGrid vis = classify_voxels(s.camera, s.depth, s.grid);
  int64_t occluded = 0, oracle_occluded = 0;
  for (int x = 0; x < s.grid.dims[0]; ++x)
    for (int y = 0; y < s.grid.dims[1]; ++y)
      for (int z = 0; z < s.grid.dims[2]; ++z) {
        if (vis.at(x, y, z) == VoxelState::Occluded) ++occluded;
        // ray test: the voxel is occluded when the depth surface along its
        // viewing ray lies strictly in front of it
        VoxelState st = oracle_classify(s.camera, s.depth, s.grid, x, y, z);
        if (st == VoxelState::Occluded) ++oracle_occluded;
      }
  CHECK(occluded == oracle_occluded);
  CHECK(occluded > 0);
}

TEST_CASE("compute_ftsdf spec values") {
  // wall at z=1, camera at origin: principal-ray voxels probe the formula
  CameraModel cam = pinhole(100, 12, 12, 25, 25);
  DepthMap depth(25, 25, 1.0f);
  GridSpec spec;
  spec.dims = {1, 1, 32};
  spec.origin = {-0.02, -0.02, -0.02};
  spec.voxel_size = 0.04;
  spec.truncation = 0.24;

  VoxelGrid grid = compute_ftsdf(cam, depth, spec);

  // voxel 25 center z = 1.0 exactly on the surface
  CHECK(std::abs(grid.at(0, 0, 0, 25)) == doctest::Approx(1.0).epsilon(1e-9));
  // voxel 22 center z = 0.88, visible, d = 0.12, tau = 0.24 -> +0.5
  double d = std::abs(0.88 - 1.0);
  double expect = 1.0 - std::min(1.0, d / spec.truncation);
  CHECK(grid.at(0, 0, 0, 22) == doctest::Approx(expect).epsilon(1e-9));
  CHECK(grid.at(0, 0, 0, 22) == doctest::Approx(0.5).epsilon(1e-6));
  // voxel 5 center z = 0.20, d = 0.80 >= tau -> 0
  CHECK(grid.at(0, 0, 0, 5) == doctest::Approx(0.0));
  // occluded voxel behind the wall: z = 1.16, d = 0.16
  double dz = std::abs(0.04 * 29.0 - 1.0);
  double e29 = -(1.0 - std::min(1.0, dz / spec.truncation));
  CHECK(grid.at(0, 0, 0, 29) == doctest::Approx(e29).epsilon(1e-6));
}

TEST_CASE("ftsdf laws hold on random synthetic scenes") {
  for (int trial = 0; trial < 5; ++trial) {
    SyntheticSceneSpec sspec = SyntheticSceneSpec::skewed_tier();
    GeneratedScene scene = generate_scene(sspec, 900 + trial);
    const Sample& s = scene.sample;
    const double bound = 1.0 - s.grid.voxel_size / s.grid.truncation;
    for (int x = 0; x < s.grid.dims[0]; ++x)
      for (int y = 0; y < s.grid.dims[1]; ++y)
        for (int z = 0; z < s.grid.dims[2]; ++z) {
          float v = s.ftsdf.at(0, x, y, z);
          VoxelState st = s.visibility.at(x, y, z);
          REQUIRE(std::abs(v) <= 1.0f);
          switch (st) {
            case VoxelState::OutsideFrustum: REQUIRE(v == 0.0f); break;
            case VoxelState::Occluded: REQUIRE(v <= 0.0f); break;
            case VoxelState::Surface:
              REQUIRE(v >= 0.0f);
              REQUIRE(std::abs(v) >= doctest::Approx(bound).epsilon(1e-6));
              break;
            case VoxelState::VisibleEmpty: REQUIRE(v >= 0.0f); break;
          }
        }
  }
}

TEST_CASE("compute_ftsdf is bit-deterministic") {
  SyntheticSceneSpec sspec = SyntheticSceneSpec::easy_tier();
  GeneratedScene scene = generate_scene(sspec, 3);
  const Sample& s = scene.sample;
  VoxelGrid a = compute_ftsdf(s.camera, s.depth, s.grid);
  VoxelGrid b = compute_ftsdf(s.camera, s.depth, s.grid);
  REQUIRE(a.values.size() == b.values.size());
  CHECK(std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(float)) == 0);
}

TEST_CASE("project_features scatters and averages") {
  CameraModel cam = pinhole(50, 16, 12, 32, 24);
  cam.translation = {-2.4, -1.6, 0.5};  // camera in front of the desk grid
  GridSpec spec = GridSpec::desk_scale();

  SUBCASE("all-zero feature map gives an all-zero volume") {
    DepthMap depth(32, 24, 2.0f);
    Image features(4, 24, 32, 0.0f);
    VoxelGrid out = project_features(cam, features, depth, spec);
    for (float v : out.values) CHECK(v == 0.0f);
  }

  SUBCASE("single nonzero pixel lands in the back-projected voxel") {
    DepthMap depth(32, 24, 0.0f);
    depth.at(10, 7) = 2.0f;
    Image features(1, 24, 32, 0.0f);
    features.at(0, 7, 10) = 3.5f;
    VoxelGrid out = project_features(cam, features, depth, spec);
    std::array<int, 3> cell;
    REQUIRE(spec.voxel_of(backproject_pixel(cam, 10, 7, 2.0), cell));
    int64_t nonzero = 0;
    for (float v : out.values)
      if (v != 0.0f) ++nonzero;
    CHECK(nonzero == 1);
    CHECK(out.at(0, cell[0], cell[1], cell[2]) == doctest::Approx(3.5f));
  }

  SUBCASE("collisions average deterministically") {
    DepthMap depth(32, 24, 0.0f);
    depth.at(10, 7) = 2.0f;
    depth.at(11, 7) = 2.0f;  // adjacent pixels, same voxel at this depth
    std::array<int, 3> c0, c1;
    REQUIRE(spec.voxel_of(backproject_pixel(cam, 10, 7, 2.0), c0));
    REQUIRE(spec.voxel_of(backproject_pixel(cam, 11, 7, 2.0), c1));
    REQUIRE(c0 == c1);
    Image features(1, 24, 32, 0.0f);
    features.at(0, 7, 10) = 1.0f;
    features.at(0, 7, 11) = 3.0f;
    VoxelGrid out = project_features(cam, features, depth, spec);
    CHECK(out.at(0, c0[0], c0[1], c0[2]) == doctest::Approx(2.0f));
  }

  SUBCASE("mismatched dimensions are rejected") {
    DepthMap depth(32, 24, 2.0f);
    Image features(1, 12, 16, 0.0f);
    CHECK_THROWS_AS(project_features(cam, features, depth, spec), Error);
  }
}
