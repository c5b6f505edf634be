export type ExtractorKind = 'speech' | 'linguistic'

export interface ExtractorSpec {
	/** registry name, matching the checkpoint id on the model hub */
	model: string
	kind: ExtractorKind
	/** transformer layer count, not counting the input embedding */
	hiddenLayers: number
	hiddenSize: number
	/** speech only: frame step of the encoder output */
	hopMs?: number
	sampleRate?: number
	/** speech only: encoder consumes fixed-size padded windows of this many seconds */
	paddedWindowSeconds?: number
	/** where the exported states are tapped, recorded in meta.json */
	tapPoint: 'pre-layernorm' | 'post-layernorm'
}

export class UnknownModel extends Error {}

// Every entry exports the embedding output plus all transformer layers,
// L = hiddenLayers + 1; downstream layer weighting decides what matters,
// so nothing is pre-selected here.
const SPECS: ExtractorSpec[] = [
	{ model: 'hubert-base-ls960', kind: 'speech', hiddenLayers: 12, hiddenSize: 768, hopMs: 20, sampleRate: 16000, tapPoint: 'pre-layernorm' },
	{ model: 'hubert-large-ll60k', kind: 'speech', hiddenLayers: 24, hiddenSize: 1024, hopMs: 20, sampleRate: 16000, tapPoint: 'pre-layernorm' },
	{ model: 'wav2vec2-base-960h', kind: 'speech', hiddenLayers: 12, hiddenSize: 768, hopMs: 20, sampleRate: 16000, tapPoint: 'pre-layernorm' },
	{ model: 'wavlm-base-plus', kind: 'speech', hiddenLayers: 12, hiddenSize: 768, hopMs: 20, sampleRate: 16000, tapPoint: 'pre-layernorm' },
	{ model: 'whisper-large-v3', kind: 'speech', hiddenLayers: 32, hiddenSize: 1280, hopMs: 20, sampleRate: 16000, paddedWindowSeconds: 30, tapPoint: 'post-layernorm' },
	{ model: 'png-bert-base', kind: 'linguistic', hiddenLayers: 12, hiddenSize: 768, tapPoint: 'post-layernorm' },
	{ model: 'pl-bert-base', kind: 'linguistic', hiddenLayers: 12, hiddenSize: 768, tapPoint: 'post-layernorm' },
]

const BY_NAME = new Map(SPECS.map(spec => [spec.model, spec]))

export function lookupModel(model: string, kind: ExtractorKind): ExtractorSpec {
	const spec = BY_NAME.get(model)
	if (!spec) {
		const known = SPECS.filter(s => s.kind === kind).map(s => s.model).join(', ')
		throw new UnknownModel(`unknown model '${model}' (known ${kind} models: ${known})`)
	}
	if (spec.kind !== kind) {
		throw new UnknownModel(`model '${model}' is a ${spec.kind} extractor, not ${kind}`)
	}
	return spec
}

export function knownModels(kind?: ExtractorKind): string[] {
	return SPECS.filter(s => kind === undefined || s.kind === kind).map(s => s.model)
}

/** zero-based indices of the exported hidden states, embedding first */
export function exportedLayers(spec: ExtractorSpec): number[] {
	return Array.from({ length: spec.hiddenLayers + 1 }, (_, i) => i)
}
