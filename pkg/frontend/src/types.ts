// Wire types for the recommendation service API. Field names mirror the
// JSON payloads exactly; nothing here is renamed or reshaped.

export type UserType = "cold_start" | "known";

export interface ProfilePayload {
  user_type: UserType;
  user_id?: string;
  age_group?: string;
  gender?: string;
  country?: string;
  recent_track_ids?: string[];
}

export interface TrackCard {
  track_id: string;
  title: string;
  artist: string;
  album: string;
  popularity: number;
  release_date: string;
  tempo: number;
  key: string;
  attributes: string[];
  semantic_ids: Record<string, number[]>;
}

export interface PlanCall {
  tool_name: string;
  tool_args: Record<string, unknown>;
}

export interface AttemptSummary {
  tool_name: string;
  stage: string;
  outcome: string;
  first_attempt: boolean;
  retry_index: number;
  pool_before: number;
  pool_after: number;
}

export interface TraceSummary {
  attempts: AttemptSummary[];
  retry_count: number;
  fallback_used: boolean;
  safety_net_used: boolean;
}

export interface TurnPayload {
  query: string;
  response: string;
  rationale: string;
  plan: PlanCall[];
  recommendations: TrackCard[];
  trace: TraceSummary;
}

export interface MessageResult extends TurnPayload {
  session_id: string;
  turn_index: number;
}

export interface ProfileSnapshot {
  user_type: UserType;
  user_id: string | null;
  age_group: string;
  gender: string;
  country: string;
  recent_tracks: TrackCard[];
}

export interface SessionSnapshot {
  session_id: string;
  created_at: number;
  updated_at: number;
  final_k: number;
  profile: ProfileSnapshot;
  turns: TurnPayload[];
}

export interface SessionCreated {
  session_id: string;
}

export type ToolStats = Record<
  string,
  { first_attempt_calls: number; first_attempt_success_rate: number }
>;
