"""Compile a three-group pulse request, validate it and show the transient."""
from ionpulse.scheduler import (SequenceRequest, compile, switch_on_transient,
                                validate)


def main():
    slots = tuple(range(300, 400)) + tuple(range(1500, 1530)) + (2800, 2810, 2820, 2830)
    schedule = compile(SequenceRequest(slots, 700.0))
    print(f"{schedule.n_samples} samples at {schedule.sample_rate_gs} GS/s")
    for rise, fall in schedule.windows:
        print(f"  Pockels window {rise / 25:.2f}-{fall / 25:.2f} ns")
    print("violations:", [v.name for v in validate(schedule)] or "none")
    payload = [p for p in switch_on_transient(schedule, 5.0).emitted if p.kind == "payload"]
    # the first group has no dark gap before it and is left unchanged
    second = [p for p in payload if p.slot >= 1500][:4]
    print("first pulses of the second group at 5 GHz:")
    for p in second:
        print(f"  t = {p.time:.1f} ns, area x{p.relative_area:.3f}, "
              f"phase {p.relative_phase:.3f} rad")


if __name__ == "__main__":
    main()
