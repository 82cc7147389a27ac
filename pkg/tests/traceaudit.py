"""Replay an event trace and check the model rules line by line."""
import math


def audit_trace(lines, net, capacity, ttl):
    txns, dead, load = {}, set(), {}
    last_t = -math.inf
    counts = {"inject": 0, "commit": 0, "abort": 0}
    for line in lines:
        t, kind, txn, node, detail = line.split(",")
        t, txn, node = float(t), int(txn), int(node)
        assert t >= last_t, f"time went backwards at {line}"
        last_t = t
        if kind in counts:
            counts[kind] += 1
        if kind == "inject":
            assert node not in dead
            txns[txn] = {"len": int(detail), "done": 0, "node": node, "src": node, "busy": False, "open": True}
        elif kind == "hop":
            x = txns[txn]
            assert node not in dead, f"hop into dead node: {line}"
            if int(detail) == 0:
                assert node == x["src"]
            else:
                assert node in set(net.out_neighbors(x["node"]).tolist()), f"not an out-neighbour: {line}"
            assert int(detail) == x["done"]
            load[node] = load.get(node, 0) + 1
            assert load[node] < capacity, f"alive node at capacity: {line}"
            x["node"], x["busy"] = node, True
        elif kind == "complete":
            x = txns[txn]
            assert x["busy"] and x["node"] == node
            load[node] -= 1
            x["busy"] = False
            x["done"] = int(detail)
        elif kind == "commit":
            x = txns[txn]
            assert x["done"] == x["len"] and x["open"]
            x["open"] = False
        elif kind == "abort":
            x = txns[txn]
            assert x["open"], f"double abort: {line}"
            x["open"] = False
            if detail == "timeout":
                assert x["done"] >= ttl and not x["busy"]
            elif detail == "no_alive_neighbor":
                assert all(v in dead for v in net.out_neighbors(node).tolist())
            elif detail == "node_death":
                assert node in dead
            if x["busy"]:
                load[x["node"]] -= 1
                x["busy"] = False
        elif kind == "death":
            assert node not in dead
            dead.add(node)
            # residents are aborted by the lines that follow
            for x in txns.values():
                if x["busy"] and x["node"] == node:
                    x["busy"] = False
            load[node] = 0
        elif kind == "choke":
            assert len(dead) == net.n_nodes
    return counts, sum(1 for x in txns.values() if x["open"])
