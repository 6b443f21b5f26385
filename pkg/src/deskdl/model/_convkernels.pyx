# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Direct same-padded convolution loops over [N, C, H, W] buffers.

Compiled core for the training hot path. Inner loops run along the W axis
with unit stride on both operands so the C compiler can vectorize them.
All entry points release the GIL, letting rank threads overlap.
"""

cimport cython

ctypedef fused real:
    float
    double


cpdef void conv2d_forward_core(real[:, :, :, ::1] xpad, real[:, :, :, ::1] w,
                               real[:, :, :, ::1] out, int dilation) nogil:
    cdef Py_ssize_t n = out.shape[0], cout = out.shape[1]
    cdef Py_ssize_t h = out.shape[2], wd = out.shape[3]
    cdef Py_ssize_t cin = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t b, co, ci, i, j, y, x
    cdef real coef
    out[:, :, :, :] = 0
    for b in range(n):
        for co in range(cout):
            for ci in range(cin):
                for i in range(kh):
                    for j in range(kw):
                        coef = w[co, ci, i, j]
                        for y in range(h):
                            for x in range(wd):
                                out[b, co, y, x] = out[b, co, y, x] + coef * xpad[b, ci, y + i * dilation, x + j * dilation]


cpdef void conv2d_backward_input_core(real[:, :, :, ::1] dy, real[:, :, :, ::1] w,
                                      real[:, :, :, ::1] dxpad, int dilation) nogil:
    cdef Py_ssize_t n = dy.shape[0], cout = dy.shape[1]
    cdef Py_ssize_t h = dy.shape[2], wd = dy.shape[3]
    cdef Py_ssize_t cin = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t b, co, ci, i, j, y, x
    cdef real coef
    dxpad[:, :, :, :] = 0
    for b in range(n):
        for co in range(cout):
            for ci in range(cin):
                for i in range(kh):
                    for j in range(kw):
                        coef = w[co, ci, i, j]
                        for y in range(h):
                            for x in range(wd):
                                dxpad[b, ci, y + i * dilation, x + j * dilation] = dxpad[b, ci, y + i * dilation, x + j * dilation] + coef * dy[b, co, y, x]


cpdef void conv2d_backward_weights_core(real[:, :, :, ::1] xpad, real[:, :, :, ::1] dy,
                                        real[:, :, :, ::1] dw, int dilation) nogil:
    cdef Py_ssize_t n = dy.shape[0], cout = dy.shape[1]
    cdef Py_ssize_t h = dy.shape[2], wd = dy.shape[3]
    cdef Py_ssize_t cin = dw.shape[1], kh = dw.shape[2], kw = dw.shape[3]
    cdef Py_ssize_t b, co, ci, i, j, y, x
    cdef real acc
    dw[:, :, :, :] = 0
    for b in range(n):
        for co in range(cout):
            for ci in range(cin):
                for i in range(kh):
                    for j in range(kw):
                        acc = 0
                        for y in range(h):
                            for x in range(wd):
                                acc = acc + dy[b, co, y, x] * xpad[b, ci, y + i * dilation, x + j * dilation]
                        dw[co, ci, i, j] = dw[co, ci, i, j] + acc
