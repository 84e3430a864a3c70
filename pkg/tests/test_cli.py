import json
import socket
import threading
import time

import numpy as np
import pytest

from arcal.cli import _parse_milestones, build_parser, main
from arcal.clouds import save_ply
from arcal.training import SceneSpec, synth_corpus


def test_parse_milestones():
    assert _parse_milestones("200:0.1,400:0.1") == ((200, 0.1), (400, 0.1))
    assert _parse_milestones("") == ()


def test_parser_rejects_unknown_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["bogus"])


def test_synth_command(tmp_path, capsys):
    out = tmp_path / "scenes"
    main(["synth", "--count", "4", "--out", str(out), "--seed", "3"])
    report = json.loads(capsys.readouterr().out)
    assert report["generated"] == 4
    assert len(list(out.glob("*.ply"))) == 4
    assert len(list(out.glob("*.json"))) == 4


def micro_data_dir(tmp_path):
    data = tmp_path / "data"
    synth_corpus(3, seed=9,
                 spec=SceneSpec(floor_points=120, robot_points=160,
                                clutter_count=0, clutter_points=0,
                                floor_extent=1.0),
                 directory=data)
    return data


def test_train_eval_detect_roundtrip(tmp_path, capsys):
    data = micro_data_dir(tmp_path)
    ckpt = tmp_path / "model.pt"
    main(["train", "--data", str(data), "--epochs", "1", "--batch", "2",
          "--lr", "0.001", "--milestones", "", "--subsample", "128",
          "--seed", "0", "--out", str(ckpt), "--net", "reduced"])
    report = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert ckpt.exists()
    assert "final_loss" in report

    main(["eval", "--ckpt", str(ckpt), "--data", str(data)])
    metrics = json.loads(capsys.readouterr().out)
    assert metrics["count"] == 3
    assert 0.0 <= metrics["detection_rate_iou50"] <= 1.0

    ply = sorted(data.glob("*.ply"))[0]
    main(["detect", "--ckpt", str(ckpt), "--cloud", str(ply)])
    detection = json.loads(capsys.readouterr().out)
    assert len(detection["center"]) == 3
    assert 0.0 <= detection["score"] <= 1.0


@pytest.fixture
def live_server(tmp_path):
    import uvicorn
    from arcal.service import create_app

    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    app = create_app(tmp_path / "served")
    config = uvicorn.Config(app, host="127.0.0.1", port=port, log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not server.started:
        if time.time() > deadline:
            raise RuntimeError("server did not start")
        time.sleep(0.05)
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=5)


def test_client_upload_and_annotate_against_live_server(tmp_path, capsys,
                                                        live_server):
    from arcal.boxes import base_corners
    from arcal.training import synth_scene

    lc = synth_scene(SceneSpec(floor_points=150, robot_points=200,
                               clutter_count=0, clutter_points=0), seed=4)
    ply = tmp_path / "scene.ply"
    save_ply(lc.cloud, ply)

    main(["client", "upload", "--server", live_server, "--cloud", str(ply)])
    upload = json.loads(capsys.readouterr().out)
    cloud_id = upload["cloud_id"]
    assert upload["point_count"] == len(lc.cloud)

    triple = base_corners(lc.box)
    main(["client", "annotate", "--server", live_server,
          "--cloud-id", cloud_id,
          "--corner=" + ",".join(str(v) for v in triple.a),
          "--corner=" + ",".join(str(v) for v in triple.b),
          "--corner=" + ",".join(str(v) for v in triple.c)])
    box = json.loads(capsys.readouterr().out)["box"]
    np.testing.assert_allclose(box["center"], lc.box.center, atol=5e-3)
