import stat
import sys
from types import SimpleNamespace

import pytest

from turnscan.synth import make_pipeline_fixture

_FFMPEG_STUB = '''#!/usr/bin/env python3
"""Stand-in frame extractor: writes round(30*fps) empty frames."""
import re
import sys
from pathlib import Path

args = sys.argv[1:]
fps = None
for a in args:
    m = re.match(r"fps=([0-9.]+)$", a)
    if m:
        fps = float(m.group(1))
pattern = args[-1]
video = args[args.index("-i") + 1]
if not Path(video).exists():
    sys.stderr.write("no such file: %s\\n" % video)
    sys.exit(1)
for i in range(1, round(30 * fps) + 1):
    Path(pattern % i).write_bytes(b"")
'''

_COLMAP_STUB = '''#!/usr/bin/env python3
"""Stand-in SfM binary: the mapper registers every frame when it gets at
least 120 of them, else 90%."""
import sys
from pathlib import Path

cmd = sys.argv[1]
opts = dict(zip(sys.argv[2::2], sys.argv[3::2]))
if cmd in ("feature_extractor", "sequential_matcher"):
    Path(opts["--database_path"]).touch()
    sys.exit(0)
if cmd == "mapper":
    frames = sorted(Path(opts["--image_path"]).glob("frame_*.png"))
    n = len(frames)
    reg = n if n >= 120 else int(n * 0.9)
    out = Path(opts["--output_path"]) / "0"
    out.mkdir(parents=True, exist_ok=True)
    (out / "cameras.txt").write_text(
        "1 PINHOLE 3840 2160 3000.0 3000.0 1920.0 1080.0\\n"
    )
    lines = []
    for i in range(1, reg + 1):
        lines.append("%d 1.0 0.0 0.0 0.0 0.0 0.0 0.0 1 %s" % (i, frames[i - 1].name))
        lines.append("")
    (out / "images.txt").write_text("\\n".join(lines) + "\\n")
    (out / "points3D.txt").write_text("")
    sys.exit(0)
sys.exit(2)
'''

_FAILING_STUB = '''#!/usr/bin/env python3
import sys
sys.stderr.write("simulated tool crash\\n")
sys.exit(3)
'''


def _write_script(path, body):
    path.write_text(body)
    path.chmod(path.stat().st_mode | stat.S_IXUSR | stat.S_IXGRP | stat.S_IXOTH)
    return str(path)


@pytest.fixture()
def stub_tools(tmp_path):
    """Executable ffmpeg/colmap stand-ins plus a 30 s 'video' file."""
    bin_dir = tmp_path / "bin"
    bin_dir.mkdir()
    video = tmp_path / "clip.mp4"
    video.write_bytes(b"\x00" * 64)
    return SimpleNamespace(
        ffmpeg=_write_script(bin_dir / "ffmpeg", _FFMPEG_STUB),
        colmap=_write_script(bin_dir / "colmap", _COLMAP_STUB),
        failing=_write_script(bin_dir / "crashy", _FAILING_STUB),
        video=str(video),
    )


@pytest.fixture(scope="session")
def synth_scene(tmp_path_factory):
    """One shared synthetic end-to-end scene (generation is ~a second)."""
    out = tmp_path_factory.mktemp("scene")
    meta = make_pipeline_fixture(out, seed=7)
    return SimpleNamespace(dir=out, meta=meta)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        label, ok = results[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {label}")
