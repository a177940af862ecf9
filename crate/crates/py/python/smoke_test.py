"""Smoke test for the hyperarm extension module."""

import math

import hyperarm


def close(a, b, tol):
    return all(abs(x - y) <= tol for ra, rb in zip(a, b) for x, y in zip(ra, rb))


def main():
    arm = hyperarm.Arm.all_heads(8)
    assert arm.num_vars == 16
    straight = arm.forward([0.0] * 16)
    assert abs(straight[2][3] - 8.0) < 1e-12

    codes = [1, -1, -1, 1, 0, 0, 0, 0, -1, 1, 1, 0, 0, 0, -1, 1]
    frozen = {1: (0.3, 0.2), 2: (-0.2, 0.25), 8: (0.1, -0.15), 14: (0.0, 0.2)}
    arm = hyperarm.Arm(codes, 1.0, frozen)
    q = [0.1 * math.sin(i + 1.0) for i in range(arm.num_vars)]
    reduced = arm.forward(q)
    classic = arm.classic_forward(arm.expand(q))
    assert close(reduced, classic, 1e-9)
    assert len(arm.jacobian(q)) == 6
    assert len(arm.jacobian(q)[0]) == arm.num_vars

    ctrl = hyperarm.Controller(16)
    assert ctrl.heads == [0]
    assert ctrl.halve().heads == [0, 8]
    assert hyperarm.state_count(16) == 5
    assert abs(hyperarm.chord_length(0.0, 4, 1.0) - 4.0) < 1e-12

    arm = hyperarm.Arm.all_heads(6)
    target = arm.forward([0.2, 0.1] * 6)
    report = arm.solve(target)
    assert report["status"] == "converged", report
    assert report["position_error"] <= 1e-4 * 6

    try:
        hyperarm.Arm([0, 1, 1])
    except hyperarm.KinematicsError:
        pass
    else:
        raise AssertionError("malformed layout accepted")
    print("smoke test passed")


if __name__ == "__main__":
    main()
