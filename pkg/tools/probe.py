"""Closed-loop behavior probe over preset difficulty knobs."""
import sys
import time
from collections import Counter
from dataclasses import replace

from muacp.presets import comparison_scenario
from muacp.sim import run_episode


def main():
    n_av = int(sys.argv[1])
    gf = float(sys.argv[2])
    cu = float(sys.argv[3])
    seeds = int(sys.argv[4])
    modes = sys.argv[5].split(",") if len(sys.argv) > 5 else ["muacp", "tcm", "sem"]
    hold = int(sys.argv[6]) if len(sys.argv) > 6 else 10
    print(f"--- {n_av}-AV gap {gf} catchup {cu} hold {hold} seeds {seeds}", flush=True)
    for mode in modes:
        t0 = time.perf_counter()
        results = []
        for s in range(seeds):
            cfg = comparison_scenario(n_av, mode=mode, seed=s, gap_factor=gf, catch_up=cu)
            if hold != 10:
                u = replace(cfg.uncertainty, perception_hold_steps=hold)
                cfg = replace(cfg, uncertainty=u)
            results.append(run_episode(cfg))
        t1 = time.perf_counter()
        succ = sum(r.success for r in results)
        coll = sum(len(r.collisions) for r in results)
        bk = sum(r.backup_count for r in results)
        mind = [round(r.min_pair_distance, 2) for r in results]
        nav = [round(r.navigation_time, 2) if r.navigation_time is not None else None for r in results]
        st = Counter()
        for r in results:
            for row in r.statuses:
                st.update(row)
        print(f"  {mode}: succ {succ}/{seeds} coll={coll} backups={bk} mindist={mind}", flush=True)
        print(f"        nav={nav} statuses={dict(st)} {t1-t0:.0f}s", flush=True)


if __name__ == "__main__":
    main()
