import json
import socket
import struct

import numpy as np

import fvv


def line_rig():
    rig = []
    for i in range(9):
        c = fvv.CameraModel()
        c.id = i
        c.intrinsics = (100.0, 100.0, 50.0, 50.0, 100, 100)
        c.translation = np.array([-float(i), 0.0, 0.0])
        rig.append(c)
    return rig


def test_selection_on_a_line():
    rig = line_rig()
    v = fvv.CameraModel()
    v.id = fvv.VIRTUAL_CAMERA_ID
    v.intrinsics = rig[0].intrinsics
    v.translation = np.array([-3.4, 0.0, 0.0])
    s = fvv.select_cameras(v, rig)
    assert s.active == [3, 4, 2]
    assert s.subscribed == [1, 2, 3, 4, 5]


def test_geometry_round_trip():
    cam = fvv.default_calibration(160, 90)[4]
    p = fvv.unproject(30.0, 40.0, 3.0, cam)
    u, v, z = fvv.project(p, cam)
    assert abs(u - 30.0) < 1e-9 and abs(v - 40.0) < 1e-9 and abs(z - 3.0) < 1e-9


def test_held_out_camera_synthesis():
    rig = fvv.default_calibration(160, 90)
    v = rig[5]
    out = fvv.synthesize_view("default", 160, 90, v, exclude=[5], t_us=1_000_000)
    assert out["rgb"].shape == (90, 160, 3)
    assert sorted(out["active"]) == [3, 4, 6]
    assert out["coverage"] > 0.95


def test_bench_reports_stages():
    r = fvv.bench(160, 90, 3)
    assert r["frames"] == 3 and r["fps"] > 0
    assert "fps" in r["table"]


def recv_control(sock):
    head = b""
    while len(head) < 4:
        head += sock.recv(4 - len(head))
    (n,) = struct.unpack("<I", head)
    body = b""
    while len(body) < n:
        body += sock.recv(n - len(body))
    return json.loads(body)


def send_control(sock, msg):
    body = json.dumps(msg).encode()
    sock.sendall(struct.pack("<I", len(body)) + body)


def test_viewer_handshake_over_raw_socket():
    with fvv.Server(160, 90) as server:
        a = socket.create_connection(("127.0.0.1", server.control_port), timeout=5)
        b = socket.create_connection(("127.0.0.1", server.control_port), timeout=5)
        try:
            send_control(a, {"type": "hello", "role": "viewer", "cameras": []})
            welcome = recv_control(a)
            assert welcome["type"] == "welcome"
            assert len(welcome["calibration"]["cameras"]) == 9
            send_control(b, {"type": "hello", "role": "viewer", "cameras": []})
            err = recv_control(b)
            assert err["type"] == "error" and err["code"] == 1
            send_control(a, {"type": "stats_request"})
            while (m := recv_control(a))["type"] == "heartbeat":
                pass
            assert m["type"] == "stats"
        finally:
            a.close()
            b.close()
