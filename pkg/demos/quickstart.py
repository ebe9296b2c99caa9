"""Quickstart tour: price a provider with the closed-form model, then watch
the same quantities emerge from a simulation.

Run:  python demos/quickstart.py
"""

import argparse

from oppsim import (
    LinkParams,
    ProviderParams,
    TransferSizes,
    estimate_single,
)
from oppsim.composition import ServiceId
from oppsim.experiments import (
    ExperimentConfig,
    build_trace,
    run_matrix,
    summary_from_rows,
)
from oppsim.policies import PolicyKind


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args()

    print("=== closed-form estimate for one provider ===")
    link = LinkParams(delta=0.02, delta_prime=0.005, V=250_000.0)
    prov = ProviderParams.from_stats(
        lam=0.002, l=1.0, l2=1.0, d=75.0, d2=2 * 75.0 ** 2)
    sizes = TransferSizes(k=40_000.0, kprime=40_000.0)
    est = estimate_single(link, prov, sizes, in_contact=False)
    print(f"expected wait to meet the provider : {est.e_w:8.1f} s")
    print(f"expected input transfer            : {est.e_b:8.1f} s")
    print(f"expected queue delay               : {est.e_dq:8.1f} s")
    print(f"expected execution                 : {est.e_ds:8.1f} s")
    print(f"expected output handoff            : {est.e_theta:8.1f} s")
    print(f"expected provisioning time         : {est.total:8.1f} s")

    print()
    print("=== a small simulated deployment (10 nodes, two policies) ===")
    sid_full = ServiceId(0, 8)
    cfg = ExperimentConfig(
        n_nodes=10,
        delta=0.02,
        delta_prime=0.005,
        duration=8_000.0,
        warmup=800.0,
        request_gap=(30.0, 50.0),
        io_size_bytes=40_000.0,
        service_kinds=((sid_full, 75.0),),
        service_density=0.4,
        policies=(PolicyKind.MEV, PolicyKind.RAN),
        seeds=(args.seed,),
    )
    n_contacts = len(build_trace(cfg, args.seed))
    print(f"synthetic trace: {n_contacts} contact intervals")
    rows = run_matrix(cfg)
    summary = summary_from_rows(rows, cfg)
    for pol, block in summary["policies"].items():
        print(f"{pol:>4}: mean provisioning time "
              f"{block['mean_provisioning_time']:7.1f} s over "
              f"{block['n_completed']} completed requests")
    bias = summary["model_vs_sim"]
    print(f"model estimate for the chosen plans: {bias['model_mean']:.1f} s "
          f"vs simulated {bias['simulated_mean']:.1f} s "
          f"({bias['relative_error']:+.1%})")


if __name__ == "__main__":
    main()
