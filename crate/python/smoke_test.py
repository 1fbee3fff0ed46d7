"""Smoke test for the scenebench extension module.

Build and import either with `maturin develop -m crates/python/Cargo.toml`, or
`cargo build -p scenebench-py` and copy target/debug/libscenebench_py.so to
scenebench.so somewhere on PYTHONPATH.
"""

import math

import scenebench as sb


def lane_clip(clip_id, ego, scenes):
    frames = []
    for i, scene in enumerate(scenes):
        frames.append({
            "frame_id": f"f{i}",
            "timestamp_s": float(i),
            "lane_count": 3,
            "ego_lane_index": ego,
            "lane_change_left": "infeasible",
            "lane_change_right": "feasible",
            "junction": False,
            "entrance": False,
            "exit": False,
            "traffic_condition": "free_flow",
            "road_scene": scene,
        })
    return {"clip_id": clip_id, "city": "beijing", "frames": frames}


def main():
    assert sb.render_question("lane_count") == "How many lanes are visible?"
    assert sb.render_answer({"task": "lane_count", "value": 4}) == "There are 4 lanes."
    assert sb.parse_answer("there are three lanes", "lane_count") == {"task": "lane_count", "value": 3}
    try:
        sb.parse_answer("3 or 4 lanes", "lane_count")
        raise AssertionError("expected ambiguity")
    except sb.ScenebenchError as e:
        assert e.args[0] == "ambiguous"

    adv = sb.group_advantages([1.0, 0.0, 1.0, 0.0])
    assert all(abs(abs(a) - 1.0) < 1e-6 for a in adv)
    assert sb.smoothness([3, 3, 4, 4, 3]) == 0.5

    scenes = ["urban", "highway", "highway", "urban", "urban"]
    gt = lane_clip("c0", 2, scenes)
    pred = lane_clip("c0", 1, scenes)
    out = sb.reward(pred, gt)
    assert math.isclose(out["r_total"], 19 / 24, abs_tol=1e-12), out["r_total"]
    steady = lane_clip("c1", 2, ["urban"] * 5)
    assert sb.reward(steady, steady)["r_total"] == 1.0

    report = sb.check_clip(gt)
    assert not report["pass"] and len(report["transition_violations"]) == 2

    engine = sb.Engine("[reward]\nlambda = 1.0\n")
    assert engine.reward(pred, gt)["r_temporal"] == 1.0
    assert engine.parse("the scene is a highway", "road_scene")["value"] == "highway"

    clips = sb.generate(4, seed=7)
    assert len(clips) == 4 and all(sb.check_clip(c)["pass"] for c in clips)
    noisy = sb.corrupt(clips[0], seed=1, burst=3)
    assert noisy["clip_id"] == clips[0]["clip_id"]

    short = dict(pred, frames=pred["frames"][:2])
    try:
        sb.reward(short, gt)
        raise AssertionError("expected length mismatch")
    except sb.ScenebenchError as e:
        assert e.args[0] == "clip_length_mismatch"

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
