import { readFileSync } from 'node:fs'

// JSON-lines utterance manifests, one record per line.  The bridge reads
// the alignment fields it needs (id, phonemes, durations) and carries
// everything else through untouched, so label columns survive the trip
// and the annotated copy it writes stays trainable downstream.

export interface ManifestRecord {
	id: string
	phonemes: string[]
	durations: number[]
	/** the raw parsed row, preserved verbatim for the output copy */
	raw: Record<string, unknown>
}

export class ManifestError extends Error {
	constructor(line: number | null, message: string) {
		super(line === null ? message : `line ${line}: ${message}`)
	}
}

const ALLOWED_KEYS = new Set(['id', 'phonemes', 'durations', 'labels', 'audio', 'features'])

function decodeRecord(raw: unknown, line: number): ManifestRecord {
	if (typeof raw !== 'object' || raw === null || Array.isArray(raw)) {
		throw new ManifestError(line, 'record is not a JSON object')
	}
	const row = raw as Record<string, unknown>
	for (const key of Object.keys(row)) {
		if (!ALLOWED_KEYS.has(key)) {
			throw new ManifestError(line, `unknown key: ${key}`)
		}
	}
	const id = row['id']
	if (typeof id !== 'string' || id.length === 0) {
		throw new ManifestError(line, 'id must be a non-empty string')
	}
	const phonemes = row['phonemes']
	if (!Array.isArray(phonemes) || phonemes.length === 0
		|| !phonemes.every(p => typeof p === 'string' && p.length > 0)) {
		throw new ManifestError(line, 'phonemes must be a non-empty list of strings')
	}
	const durations = row['durations']
	if (!Array.isArray(durations)) {
		throw new ManifestError(line, 'durations must be a list')
	}
	if (durations.length !== phonemes.length) {
		throw new ManifestError(line,
			`${durations.length} durations for ${phonemes.length} phonemes`)
	}
	for (const dur of durations) {
		if (typeof dur !== 'number' || !Number.isInteger(dur)) {
			throw new ManifestError(line, `duration ${JSON.stringify(dur)} is not an integer`)
		}
		if (dur < 0) {
			throw new ManifestError(line, `negative duration ${dur}`)
		}
	}
	return {
		id,
		phonemes: phonemes as string[],
		durations: durations as number[],
		raw: row,
	}
}

export function parseManifest(path: string): ManifestRecord[] {
	const text = readFileSync(path, 'utf-8')
	const records: ManifestRecord[] = []
	const seen = new Set<string>()
	const lines = text.split('\n')
	for (let i = 0; i < lines.length; i++) {
		const line = lines[i]!.trim()
		if (line === '') {
			continue
		}
		let raw: unknown
		try {
			raw = JSON.parse(line)
		} catch (err) {
			throw new ManifestError(i + 1, `invalid JSON (${(err as Error).message})`)
		}
		const record = decodeRecord(raw, i + 1)
		if (seen.has(record.id)) {
			throw new ManifestError(i + 1, `duplicate utterance id '${record.id}'`)
		}
		seen.add(record.id)
		records.push(record)
	}
	if (records.length === 0) {
		throw new ManifestError(0, 'manifest is empty')
	}
	return records
}

export function totalDuration(record: ManifestRecord): number {
	return record.durations.reduce((a, b) => a + b, 0)
}
