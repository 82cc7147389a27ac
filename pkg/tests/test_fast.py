import math

from hypothesis import given, settings
from hypothesis import strategies as st

from txnsim.config import SimConfig
from txnsim.engine import simulate
from txnsim.fast import simulate_fast

configs = st.builds(
    SimConfig,
    n_nodes=st.integers(2, 150),
    capacity=st.one_of(st.integers(2, 12), st.just(math.inf)),
    density=st.sampled_from([0.02, 0.1, 0.3, 1.0]),
    duration=st.sampled_from([30.0, 200.0, 600.0]),
    inject_rate=st.one_of(st.just(0.0), st.floats(0.01, 12.0)),
    cascade_prob=st.sampled_from([0.0, 0.01, 0.3, 1.0]),
    dep_window=st.sampled_from([0.5, 10.0, 25.0]),
    ttl=st.sampled_from([8.0, 60.0]),
    txn_len_mean=st.sampled_from([1.0, 10.0, 12.0]),
    mean_ttf=st.sampled_from([math.inf, 100.0, 2000.0]),
    seed=st.integers(0, 2 ** 40),
)


@settings(max_examples=80)
@given(configs)
def test_fast_kernel_reproduces_reference_trace(cfg):
    if cfg.edge_count < 1:
        return
    m_ref, t_ref = simulate(cfg, trace=True)
    m_fast, t_fast = simulate_fast(cfg, trace=True)
    assert m_fast.history_overflow == 0
    assert m_fast.to_text() == m_ref.to_text()
    assert t_fast == t_ref


@settings(max_examples=20)
@given(configs, st.floats(0.0, 1.0))
def test_fault_fraction_mode_agrees(cfg, frac):
    if cfg.edge_count < 1:
        return
    cfg = cfg.with_(mean_ttf=math.inf, fault_fraction=frac)
    assert simulate_fast(cfg, trace=True) == simulate(cfg, trace=True)


def test_dense_traffic_grows_buffers():
    # enough concurrent transactions to outgrow the initial slot and trace buffers
    cfg = SimConfig(n_nodes=400, capacity=200, density=0.5, inject_rate=150.0, duration=60.0,
                    cascade_prob=0.5, seed=9)
    m_ref, t_ref = simulate(cfg, trace=True)
    m_fast, t_fast = simulate_fast(cfg, trace=True)
    assert m_fast.to_text() == m_ref.to_text() and t_fast == t_ref
