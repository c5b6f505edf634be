import { mkdtempSync, writeFileSync } from 'node:fs'
import { tmpdir } from 'node:os'
import { join } from 'node:path'

export function scratchDir(prefix: string): string {
	return mkdtempSync(join(tmpdir(), `${prefix}-`))
}

export function writeManifest(dir: string, rows: object[], name = 'utts.jsonl'): string {
	const path = join(dir, name)
	writeFileSync(path, rows.map(r => JSON.stringify(r)).join('\n') + '\n')
	return path
}

// phoneme symbols and label values below match the consumer's default
// inventory: vowels are mora cores and carry the four label columns
export function labeledRows(count: number): object[] {
	const rows: object[] = []
	const accs = ['[', ']', '*', '#', '%', '?']
	const bis = ['0', '1', '2', '3', 'F', 'D']
	for (let i = 0; i < count; i++) {
		rows.push({
			id: `utt${i}`,
			phonemes: ['k', 'a', 't', 'a'],
			durations: [2 + (i % 3), 3, 2, 4 + (i % 2)],
			labels: {
				acc: [null, accs[i % accs.length], null, accs[(i + 1) % accs.length]],
				hl: [null, i % 2 ? 'L' : 'H', null, 'H'],
				bi: [null, bis[i % bis.length], null, bis[(i + 2) % bis.length]],
				pau: [null, 'N', null, i % 2 ? 'Y' : 'N'],
			},
		})
	}
	return rows
}
