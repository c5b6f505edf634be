// Deterministic, platform-independent randomness for stub dumps.  All
// arithmetic stays in uint32 land (Math.imul + >>> 0), so the byte
// streams are reproducible across machines and node versions.

export function fnv1a(text: string): number {
	let hash = 0x811c9dc5
	for (let i = 0; i < text.length; i++) {
		hash ^= text.charCodeAt(i)
		hash = Math.imul(hash, 0x01000193) >>> 0
	}
	return hash >>> 0
}

/** mulberry32: tiny 32-bit generator, uniform on [0, 1) */
export function mulberry32(seed: number): () => number {
	let state = seed >>> 0
	return () => {
		state = (state + 0x6d2b79f5) >>> 0
		let z = state
		z = Math.imul(z ^ (z >>> 15), z | 1)
		z ^= z + Math.imul(z ^ (z >>> 7), z | 61)
		return ((z ^ (z >>> 14)) >>> 0) / 4294967296
	}
}

/**
 * Seed for one utterance's stream.  The utterance id is folded in so two
 * utterances dumped under the same run seed get distinct payloads, and
 * the stream name so speech and linguistic dumps never share a sequence.
 */
export function streamSeed(runSeed: number, stream: string, utteranceId: string): number {
	return fnv1a(`${runSeed >>> 0}/${stream}/${utteranceId}`)
}

/** values uniform on [-1, 1), rounded to float32 */
export function fillUniform(seed: number, count: number): Float32Array {
	const next = mulberry32(seed)
	const out = new Float32Array(count)
	for (let i = 0; i < count; i++) {
		out[i] = Math.fround(2 * next() - 1)
	}
	return out
}
