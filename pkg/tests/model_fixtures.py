"""A small hand-written sparse model available in both text and binary
layouts, built from the same float64 values so the two parse identically."""

import struct

SQ2H = 0.7071067811865476  # closest double to sqrt(2)/2

CAMERAS = [
    # (camera_id, model_name, model_id, width, height, params)
    (1, "PINHOLE", 1, 3840, 2160, (3000.0, 3000.0, 1920.0, 1080.0)),
    (2, "SIMPLE_RADIAL", 2, 1920, 1080, (1200.0, 960.0, 540.0, 0.05)),
]

IMAGES = [
    # (image_id, (qw,qx,qy,qz), (tx,ty,tz), camera_id, name, observations)
    # File order deliberately differs from both id order and name order.
    (7, (1.0, 0.0, 0.0, 0.0), (0.0, 0.0, 0.0), 1, "frame_0002.png",
     [(12.5, 34.25, 1), (100.0, 200.0, -1)]),
    (2, (SQ2H, 0.0, 0.0, SQ2H), (1.0, 0.0, 0.0), 1, "frame_0001.png",
     []),
    (5, (0.5, 0.5, 0.5, 0.5), (-0.25, 0.125, 2.0), 2, "frame_0003.png",
     [(640.0, 360.5, 2)]),
]

POINTS3D = [
    # (point_id, (x,y,z), (r,g,b), error, track [(image_id, point2d_idx)])
    (1, (0.5, 0.25, 1.0), (255, 0, 0), 0.5, [(7, 0), (5, 0)]),
    (2, (-1.0, 2.0, 0.125), (0, 255, 0), 1.5, [(7, 1)]),
]
MEAN_REPROJ_ERROR = 1.0  # (0.5 + 1.5) / 2


def write_text_model(d):
    d.mkdir(parents=True, exist_ok=True)
    cam_lines = ["# CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]"]
    for cam_id, name, _, w, h, params in CAMERAS:
        cam_lines.append(f"{cam_id} {name} {w} {h} " + " ".join(repr(p) for p in params))
    (d / "cameras.txt").write_text("\n".join(cam_lines) + "\n")

    img_lines = [
        "# IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME",
        "#   POINTS2D[] as (X, Y, POINT3D_ID)",
    ]
    for image_id, q, t, cam_id, name, obs in IMAGES:
        vals = " ".join(repr(v) for v in (*q, *t))
        img_lines.append(f"{image_id} {vals} {cam_id} {name}")
        img_lines.append(" ".join(f"{repr(x)} {repr(y)} {pid}" for x, y, pid in obs))
    (d / "images.txt").write_text("\n".join(img_lines) + "\n")

    pt_lines = ["# POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)"]
    for pid, xyz, rgb, err, track in POINTS3D:
        fields = [str(pid), *(repr(v) for v in xyz), *(str(c) for c in rgb), repr(err)]
        for im, p2d in track:
            fields += [str(im), str(p2d)]
        pt_lines.append(" ".join(fields))
    (d / "points3D.txt").write_text("\n".join(pt_lines) + "\n")


def write_binary_model(d):
    d.mkdir(parents=True, exist_ok=True)
    buf = struct.pack("<Q", len(CAMERAS))
    for cam_id, _, model_id, w, h, params in CAMERAS:
        buf += struct.pack("<iiQQ", cam_id, model_id, w, h)
        buf += struct.pack(f"<{len(params)}d", *params)
    (d / "cameras.bin").write_bytes(buf)

    buf = struct.pack("<Q", len(IMAGES))
    for image_id, q, t, cam_id, name, obs in IMAGES:
        buf += struct.pack("<idddddddi", image_id, *q, *t, cam_id)
        buf += name.encode("ascii") + b"\x00"
        buf += struct.pack("<Q", len(obs))
        for x, y, pid in obs:
            buf += struct.pack("<ddq", x, y, pid)
    (d / "images.bin").write_bytes(buf)

    buf = struct.pack("<Q", len(POINTS3D))
    for pid, xyz, rgb, err, track in POINTS3D:
        buf += struct.pack("<QdddBBBd", pid, *xyz, *rgb, err)
        buf += struct.pack("<Q", len(track))
        for im, p2d in track:
            buf += struct.pack("<ii", im, p2d)
    (d / "points3D.bin").write_bytes(buf)


def assert_models_equal(a, b):
    """Field-by-field equality of two parsed sparse models (exact floats)."""
    import numpy as np

    assert set(a.cameras) == set(b.cameras)
    for cid in a.cameras:
        ca, cb = a.cameras[cid], b.cameras[cid]
        assert (ca.camera_id, ca.model_name, ca.width, ca.height) == (
            cb.camera_id, cb.model_name, cb.width, cb.height
        )
        assert ca.params == cb.params
    assert len(a.images) == len(b.images)
    for ia, ib in zip(a.images, b.images):
        assert (ia.image_id, ia.camera_id, ia.file_name) == (
            ib.image_id, ib.camera_id, ib.file_name
        )
        assert ia.pose_cw.convention is ib.pose_cw.convention
        assert np.array_equal(ia.pose_cw.rotation, ib.pose_cw.rotation)
        assert np.array_equal(ia.pose_cw.translation, ib.pose_cw.translation)
    assert a.points3d_count == b.points3d_count
    assert a.mean_reprojection_error == b.mean_reprojection_error
