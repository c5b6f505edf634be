// onnxruntime-node is an optional runtime dependency, installed only by
// users running real model dumps; this keeps the build independent of it.
declare module 'onnxruntime-node' {
	const ort: {
		InferenceSession: {
			create(path: string, options?: object): Promise<{
				run(feeds: Record<string, unknown>): Promise<Record<string, unknown>>
			}>
		}
		Tensor: new (type: string, data: unknown, dims: number[]) => unknown
	}
	export default ort
}
