"""Weighted top-2 vote tallies over many independent ballots."""
import numpy as np
from scipy import sparse
__docformat__ = 'reStructuredText en'


def tally(rows, labels, weights, n_rows):
    """Sums the votes ``(row, label, weight)``.

    :param rows: ballot index of each vote
    :param labels: voted label id (id 0 is an abstention and is ignored)
    :param weights: vote weights (scalar or array)
    :param n_rows: number of ballots
    :return: sparse matrix (n_rows x max label + 1) of summed weights
    :rtype: scipy.sparse.csr_matrix
    """
    rows = np.asarray(rows, dtype=np.int64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    weights = np.broadcast_to(np.asarray(weights, dtype=np.float64),
                              rows.shape)
    keep = (labels != 0) & (weights != 0)
    n_labels = int(labels.max(initial=0)) + 1
    votes = sparse.coo_matrix(
        (weights[keep], (rows[keep], labels[keep])),
        shape=(n_rows, n_labels)).tocsr()
    votes.sum_duplicates()
    votes.eliminate_zeros()
    return votes


def top2(votes):
    """Most and second most voted label of every ballot. Ties are broken by
    the smaller label id; ballots without votes get label 0 with 0 votes.

    :param votes: matrix returned by :py:func:`tally`
    :return: top1 ids, top1 votes, top2 ids, top2 votes
    """
    n_rows = votes.shape[0]
    top1_id = np.zeros(n_rows, dtype=np.int64)
    top2_id = np.zeros(n_rows, dtype=np.int64)
    top1_v = np.zeros(n_rows)
    top2_v = np.zeros(n_rows)
    coo = votes.tocoo()
    if coo.nnz == 0:
        return top1_id, top1_v, top2_id, top2_v
    rr, ll, vv = coo.row, coo.col, coo.data
    order = np.lexsort((ll, -vv, rr))
    rr, ll, vv = rr[order], ll[order], vv[order]
    first = np.flatnonzero(np.r_[True, rr[1:] != rr[:-1]])
    top1_id[rr[first]] = ll[first]
    top1_v[rr[first]] = vv[first]
    second = first + 1
    second = second[second < rr.size]
    second = second[rr[second] == rr[second - 1]]
    top2_id[rr[second]] = ll[second]
    top2_v[rr[second]] = vv[second]
    return top1_id, top1_v, top2_id, top2_v
