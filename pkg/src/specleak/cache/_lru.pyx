# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled replay of many LRU traces; same contract as lru._lru_batch_py."""
import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free

cnp.import_array()


def lru_batch(const cnp.int64_t[:, ::1] blocks, const cnp.uint8_t[:, ::1] active,
              long nsets, int ways, const cnp.int64_t[:, ::1] probe):
    cdef Py_ssize_t rows = blocks.shape[0], n = blocks.shape[1], nprobe = probe.shape[1]
    cdef Py_ssize_t r, j, k, w, pos
    cdef long mask = nsets - 1, s
    cdef cnp.int64_t b, tmp
    cdef int fill
    out = np.zeros((rows, nprobe), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] o = out
    cdef cnp.int64_t *lines = <cnp.int64_t *> malloc(nsets * ways * sizeof(cnp.int64_t))
    cdef int *count = <int *> malloc(nsets * sizeof(int))
    if lines == NULL or count == NULL:
        free(lines)
        free(count)
        raise MemoryError()
    try:
        for r in range(rows):
            for s in range(nsets):
                count[s] = 0
            for j in range(n):
                if not active[r, j]:
                    continue
                b = blocks[r, j]
                s = b & mask
                fill = count[s]
                pos = -1
                for w in range(fill):
                    if lines[s * ways + w] == b:
                        pos = w
                        break
                if pos < 0:
                    if fill < ways:
                        count[s] = fill + 1
                        pos = fill
                    else:
                        pos = ways - 1
                # shift [0, pos) right by one and put b in front
                w = pos
                while w > 0:
                    lines[s * ways + w] = lines[s * ways + w - 1]
                    w -= 1
                lines[s * ways] = b
            for k in range(nprobe):
                b = probe[r, k]
                if b < 0:
                    continue
                s = b & mask
                for w in range(count[s]):
                    if lines[s * ways + w] == b:
                        o[r, k] = 1
                        break
    finally:
        free(lines)
        free(count)
    return out
