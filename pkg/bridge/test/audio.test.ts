import { describe, expect, it } from 'vitest'

import { AudioDecodeError, decodeWav, resampleLinear } from '../src/audio.js'

function pcm16Wav(samples: number[], sampleRate: number, channels = 1): Buffer {
	const data = Buffer.alloc(2 * samples.length)
	samples.forEach((s, i) => data.writeInt16LE(Math.round(s * 32767), 2 * i))
	return riff(data, sampleRate, channels, 1, 16)
}

function float32Wav(samples: number[], sampleRate: number): Buffer {
	const data = Buffer.alloc(4 * samples.length)
	samples.forEach((s, i) => data.writeFloatLE(s, 4 * i))
	return riff(data, sampleRate, 1, 3, 32)
}

function riff(data: Buffer, sampleRate: number, channels: number, format: number, bits: number): Buffer {
	const header = Buffer.alloc(44)
	header.write('RIFF', 0, 'ascii')
	header.writeUInt32LE(36 + data.length, 4)
	header.write('WAVE', 8, 'ascii')
	header.write('fmt ', 12, 'ascii')
	header.writeUInt32LE(16, 16)
	header.writeUInt16LE(format, 20)
	header.writeUInt16LE(channels, 22)
	header.writeUInt32LE(sampleRate, 24)
	header.writeUInt32LE(sampleRate * channels * bits / 8, 28)
	header.writeUInt16LE(channels * bits / 8, 32)
	header.writeUInt16LE(bits, 34)
	header.write('data', 36, 'ascii')
	header.writeUInt32LE(data.length, 40)
	return Buffer.concat([header, data])
}

describe('wav decoding', () => {
	it('decodes PCM16 within quantization error', () => {
		const audio = decodeWav(pcm16Wav([0, 0.5, -0.5, 1, -1], 16000))
		expect(audio.sampleRate).toBe(16000)
		expect(audio.samples).toHaveLength(5)
		expect(audio.samples[1]).toBeCloseTo(0.5, 4)
		expect(audio.samples[2]).toBeCloseTo(-0.5, 4)
	})

	it('decodes float32 exactly', () => {
		const audio = decodeWav(float32Wav([0.125, -0.75], 22050))
		expect(audio.sampleRate).toBe(22050)
		expect(Array.from(audio.samples)).toEqual([0.125, -0.75])
	})

	it('averages stereo down to mono', () => {
		const audio = decodeWav(pcm16Wav([1, 0, 0, 1], 8000, 2))
		expect(audio.samples).toHaveLength(2)
		expect(audio.samples[0]).toBeCloseTo(0.5, 3)
		expect(audio.samples[1]).toBeCloseTo(0.5, 3)
	})

	it('rejects non-wav bytes and empty data', () => {
		expect(() => decodeWav(Buffer.from('not audio at all, just text.................'))).toThrow(AudioDecodeError)
		expect(() => decodeWav(pcm16Wav([], 16000))).toThrow(/no audio samples/)
	})

	it('rejects unsupported encodings', () => {
		const alaw = riff(Buffer.alloc(8), 8000, 1, 6, 8)
		expect(() => decodeWav(alaw)).toThrow(/unsupported encoding/)
	})
})

describe('resampling', () => {
	it('is the identity at the native rate', () => {
		const audio = { samples: new Float32Array([1, 2, 3]), sampleRate: 16000 }
		expect(resampleLinear(audio, 16000)).toBe(audio)
	})

	it('doubles the sample count going 8k to 16k', () => {
		const samples = new Float32Array(800).map((_, i) => Math.sin(i / 50))
		const out = resampleLinear({ samples, sampleRate: 8000 }, 16000)
		expect(out.sampleRate).toBe(16000)
		expect(Math.abs(out.samples.length - 1600)).toBeLessThanOrEqual(1)
		expect(out.samples[0]).toBeCloseTo(samples[0]!, 6)
	})

	it('preserves a constant signal exactly', () => {
		const out = resampleLinear({ samples: new Float32Array(100).fill(0.25), sampleRate: 48000 }, 16000)
		for (const v of out.samples) {
			expect(v).toBe(0.25)
		}
	})
})
