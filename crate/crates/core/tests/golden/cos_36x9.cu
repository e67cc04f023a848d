// node 1: cos -> f32(36, 9)
extern "C" __global__ void __launch_bounds__(256) pair0_cuda_k1(float* __restrict__ out, const float* __restrict__ in0) {
    int idx = ((int)blockIdx.x) * 256 + ((int)threadIdx.x);
    if (idx < 324) {
        out[idx] = __cosf(in0[idx]);
    }
}

extern "C" void pair0_cuda(float* v1, const float* v0) {
    float* d_v1;
    cudaMalloc((void**)&d_v1, 324 * sizeof(float));
    float* d_v0;
    cudaMalloc((void**)&d_v0, 324 * sizeof(float));
    cudaMemcpy(d_v0, v0, 324 * sizeof(float), cudaMemcpyHostToDevice);
    pair0_cuda_k1<<<2, 256>>>(d_v1, d_v0);
    cudaDeviceSynchronize();
    cudaMemcpy(v1, d_v1, 324 * sizeof(float), cudaMemcpyDeviceToHost);
    cudaFree(d_v1);
    cudaFree(d_v0);
}
