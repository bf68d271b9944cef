#!/usr/bin/env python3
"""Writes the synthetic radial feeder fixtures under data/.

The feeders are arbitrary valid radial trees in per-unit (base 12.66 kV,
1 MVA). They are not reproductions of any published test feeder.
"""
import pathlib
import random

DATA = pathlib.Path(__file__).resolve().parent.parent / "data"


def write(name, comment, parents, loads, impedances, slack_v=1.0):
    n = len(parents)
    lines = [f"# {comment}", "# per-unit on 12.66 kV / 1 MVA base", "convexvolt-network 1",
             f"buses {n}", f"slack_voltage_sq {slack_v!r}"]
    for bus, parent in enumerate(parents):
        p, q = loads[bus]
        lines.append(f"bus {bus} {'-' if parent is None else parent} {p!r} {q!r}")
    for bus, parent in enumerate(parents):
        if parent is None:
            continue
        r, x = impedances[bus]
        lines.append(f"line {parent} {bus} {r!r} {x!r}")
    (DATA / name).write_text("\n".join(lines) + "\n")


def feeder3():
    parents = [None, 0, 1]
    loads = [(0.0, 0.0), (0.12, 0.06), (0.10, 0.05)]
    imp = [None, (0.02, 0.04), (0.03, 0.03)]
    write("feeder3.net", "3-bus chain used by regulation fixtures", parents, loads, imp)


def feeder10():
    #        0
    #        |
    #        1 ------- 7 - 8 - 9
    #        |
    #        2 - 5 - 6
    #        |
    #        3 - 4
    parents = [None, 0, 1, 2, 3, 2, 5, 1, 7, 8]
    loads = [(0.0, 0.0), (0.10, 0.05), (0.09, 0.04), (0.12, 0.08), (0.06, 0.03),
             (0.06, 0.02), (0.20, 0.10), (0.20, 0.10), (0.06, 0.02), (0.06, 0.02)]
    imp = [None, (0.0058, 0.0029), (0.0308, 0.0157), (0.0228, 0.0116), (0.0238, 0.0121),
           (0.0511, 0.0441), (0.0117, 0.0386), (0.0444, 0.0147), (0.0643, 0.0462), (0.0651, 0.0462)]
    write("feeder10.net", "synthetic 10-bus radial feeder", parents, loads, imp)


def feeder33():
    # Trunk 0..17, laterals at 1 (18..21), 2 (22..24) and 5 (25..32).
    parents = [None] + list(range(0, 17)) + [1, 18, 19, 20] + [2, 22, 23] + [5] + list(range(25, 32))
    assert len(parents) == 33
    rng = random.Random(33)
    loads = [(0.0, 0.0)]
    imp = [None]
    for bus in range(1, 33):
        p = round(rng.uniform(0.004, 0.016), 4)
        loads.append((p, round(p * rng.uniform(0.3, 0.6), 4)))
        imp.append((round(rng.uniform(0.004, 0.03), 4), round(rng.uniform(0.004, 0.03), 4)))
    write("feeder33.net", "synthetic 33-bus radial feeder", parents, loads, imp)


if __name__ == "__main__":
    DATA.mkdir(exist_ok=True)
    feeder3()
    feeder10()
    feeder33()
