import numpy as np

from apps.core.exporters import read_csv, write_csv, write_json


def write_interfaces_csv(path, report):
    """beta, interface_x1, interface_x2, ...; rows with fewer interfaces are padded"""
    width = max((len(i) for i in report.interfaces), default=0)
    header = ['beta'] + [f'interface_x{j + 1}' for j in range(width)]
    rows = ([beta, *xs, *([''] * (width - len(xs)))]
            for beta, xs in zip(report.betas, report.interfaces))
    return write_csv(path, header, rows)


def read_interfaces_csv(path):
    """[(beta, (x, ...)), ...]"""
    _, rows = read_csv(path)
    return [(float(row[0]), tuple(float(x) for x in row[1:] if x != '')) for row in rows]


def write_report_json(path, report, extra=None):
    data = report.to_dict()
    data.update(extra or {})
    return write_json(path, data)


def write_sweep_csv(path, report):
    header = ['beta', 'overlap', 'sup_ratio', 'amplitude', 'max_gradient',
              'max_second_difference', 'beta_sup_w', 'sup_u_gap']
    columns = np.column_stack([report.betas, report.overlaps, report.sup_ratio,
                               report.amplitudes, report.lip_estimate,
                               report.second_differences, report.collapse_products])
    return write_csv(path, header, columns.tolist())
