"""Smoke test for the dualband extension module."""

import dualband


def main():
    b24 = dualband.BandConfig("2.4GHz")
    b868 = dualband.BandConfig("868MHz")
    assert b24.slot_duration_us == 10_000 and b868.slot_duration_us == 29_380
    assert (b24.channel_count, b868.channel_count) == (16, 34)

    topo = dualband.Topology.linear(5)
    assert len(topo) == 5 and topo.positions[0] == (50.0, 50.0)
    app = dualband.AppConfig(setup_time=120.0, duration=60.0, seed=7)

    t24 = dualband.run_band(topo, b24, app)
    t868 = dualband.run_band(topo, b868, app)
    assert t24.generated == t868.generated > 0
    generated, delivered, *rest = t24.conservation()
    assert generated == delivered + sum(rest)

    report = dualband.combine(t24, t868)
    assert report.pdr("combined") >= max(report.pdr("2.4GHz"), report.pdr("868MHz"))
    print(f"pdr 2.4={report.pdr('2.4GHz'):.3f} 868={report.pdr('868MHz'):.3f} "
          f"combined={report.pdr('combined'):.3f}")

    spec_hash, rows = dualband.run_experiment(
        '{"node_counts": [5], "seeds": [1], "app": {"setup_time": 60.0, "duration": 30.0}}'
    )
    assert len(spec_hash) == 64 and [r[0] for r in rows] == ["linear_5", "random_5"]
    try:
        dualband.BandConfig("5GHz")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown band accepted")
    print("ok")


if __name__ == "__main__":
    main()
